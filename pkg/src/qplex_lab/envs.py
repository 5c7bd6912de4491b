"""Cooperative didactic environments: one-step matrix games and a two-state MMDP.

Action index 0 is the first action in the payoff tables.  Both environments are
deterministic and finite, so they expose their full dynamics through
:meth:`transition`, which the return oracle and the tests use directly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

PAYOFFS = {
    # harder game: the two 0-diagonal cells of the original game become 6
    "harder": np.array([[8.0, -12.0, -12.0],
                        [-12.0, 6.0, 0.0],
                        [-12.0, 0.0, 6.0]]),
    "original": np.array([[8.0, -12.0, -12.0],
                          [-12.0, 0.0, 0.0],
                          [-12.0, 0.0, 0.0]]),
}


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    horizon: int
    gamma: float

    def __post_init__(self):
        if self.n_agents < 2 or self.n_actions < 2 or self.horizon < 1:
            raise ContractError(f"invalid env spec {self}")
        if not 0.0 <= self.gamma < 1.0:
            raise ContractError(f"gamma must lie in [0, 1), got {self.gamma}")

    def header(self) -> str:
        return (f"n_agents={self.n_agents} n_actions={self.n_actions} obs_dim={self.obs_dim} "
                f"state_dim={self.state_dim} horizon={self.horizon} gamma={self.gamma!r}")


@dataclass
class StepResult:
    obs: list[np.ndarray]
    state: np.ndarray
    reward: float
    done: bool


class Env:
    """Base for finite deterministic multi-agent environments."""

    name = "env"
    spec: EnvSpec
    n_states: int
    start_state: int

    def __init__(self):
        self._s = self.start_state
        self.t = 0
        self.done = True

    # subclasses supply these three
    def transition(self, s: int, joint_action: tuple[int, ...]) -> tuple[float, int]:
        raise NotImplementedError

    def state_vector(self, s: int) -> np.ndarray:
        raise NotImplementedError

    def obs_vectors(self, s: int) -> list[np.ndarray]:
        raise NotImplementedError

    def _result(self, reward: float) -> StepResult:
        return StepResult(self.obs_vectors(self._s), self.state_vector(self._s), reward, self.done)

    def reset(self) -> StepResult:
        self._s = self.start_state
        self.t = 0
        self.done = False
        return self._result(0.0)

    def step(self, joint_action) -> StepResult:
        if self.done:
            raise ContractError("step() called on a finished episode; call reset() first")
        joint_action = tuple(int(a) for a in joint_action)
        if len(joint_action) != self.spec.n_agents:
            raise ContractError(f"expected {self.spec.n_agents} actions, got {len(joint_action)}")
        for a in joint_action:
            if not 0 <= a < self.spec.n_actions:
                raise ContractError(f"action {a} outside [0, {self.spec.n_actions})")
        reward, self._s = self.transition(self._s, joint_action)
        self.t += 1
        self.done = self.t >= self.spec.horizon
        return self._result(reward)

    @property
    def state_index(self) -> int:
        return self._s

    def joint_actions(self):
        return itertools.product(range(self.spec.n_actions), repeat=self.spec.n_agents)

    def probe_states(self) -> list[int]:
        """State indices over which Q-tables and sup-norms are reported."""
        return list(range(self.n_states))


class MatrixGame(Env):
    """Stateless one-step game; every agent observes a constant 0."""

    n_states = 1
    start_state = 0

    def __init__(self, variant: str = "harder", gamma: float = 0.99):
        if variant not in PAYOFFS:
            raise ContractError(f"unknown matrix-game variant {variant!r}")
        self.variant = variant
        self.name = f"matrix/{variant}"
        self.payoff = PAYOFFS[variant].copy()
        n = self.payoff.shape[0]
        self.spec = EnvSpec(n_agents=2, n_actions=n, obs_dim=1, state_dim=1, horizon=1, gamma=gamma)
        super().__init__()

    def transition(self, s, joint_action):
        a1, a2 = joint_action
        return float(self.payoff[a1, a2]), s

    def state_vector(self, s):
        return np.zeros(1)

    def obs_vectors(self, s):
        return [np.zeros(1) for _ in range(self.spec.n_agents)]


class TwoStateMMDP(Env):
    """Two agents, two actions, states s1 (index 0, absorbing) and s2 (index 1, start).

    At s2: both play 0 -> reward 1, stay; both play 1 -> reward 0, move to s1;
    otherwise reward 0, stay.  Observations equal the one-hot global state.
    """

    name = "mmdp"
    n_states = 2
    start_state = 1

    def __init__(self, horizon: int = 100, gamma: float = 0.99):
        self.spec = EnvSpec(n_agents=2, n_actions=2, obs_dim=2, state_dim=2, horizon=horizon, gamma=gamma)
        super().__init__()

    def transition(self, s, joint_action):
        if s == 0:
            return 0.0, 0
        a1, a2 = joint_action
        if a1 == a2 == 0:
            return 1.0, 1
        if a1 == a2 == 1:
            return 0.0, 0
        return 0.0, 1

    def state_vector(self, s):
        v = np.zeros(2)
        v[s] = 1.0
        return v

    def obs_vectors(self, s):
        return [self.state_vector(s) for _ in range(self.spec.n_agents)]


def make_env(name: str, variant: str | None = None, **kwargs) -> Env:
    """Build an environment from a CLI-style name such as ``matrix`` or ``matrix/harder``."""
    if "/" in name:
        name, variant = name.split("/", 1)
    if name == "matrix":
        return MatrixGame(variant or "harder", **kwargs)
    if name == "mmdp":
        return TwoStateMMDP(**kwargs)
    raise ContractError(f"unknown environment {name!r}")


def optimal_return_oracle(env: Env) -> float:
    """Optimal episode return by enumeration / backward induction over the true dynamics.

    Matrix games report the best undiscounted payoff; the MMDP reports the best
    discounted return over its finite horizon from the start state.
    """
    if isinstance(env, MatrixGame):
        return max(env.transition(0, a)[0] for a in env.joint_actions())
    if isinstance(env, TwoStateMMDP):
        gamma = env.spec.gamma
        value = np.zeros(env.n_states)
        for _ in range(env.spec.horizon):
            new = np.full(env.n_states, -np.inf)
            for s in range(env.n_states):
                for a in env.joint_actions():
                    r, s2 = env.transition(s, a)
                    new[s] = max(new[s], r + gamma * value[s2])
            value = new
        return float(value[env.start_state])
    raise ContractError(f"no optimal-return oracle for {type(env).__name__}")
