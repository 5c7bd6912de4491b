"""Fixed offline datasets: uniform collection and a plain-text transition format.

File layout::

    # qplex-dataset env=<name> n_agents=.. n_actions=.. obs_dim=.. state_dim=.. horizon=.. gamma=..
    <episode> <t> <state...> <obs agent 0...> ... <obs agent n-1...> <a_0> ... <a_{n-1}> <reward> <done>

One line per transition, fields separated by single spaces, floats written with
``repr`` so a write/read cycle is exact.  The observation after an episode's last
step is not stored; on load it repeats the last stored observation (the
transition is terminal, so it never enters a TD target).
"""
from __future__ import annotations

import os

import numpy as np

from .envs import Env, EnvSpec, MatrixGame, make_env
from .errors import ContractError, UsageError
from .trainer import Episode

MAGIC = "# qplex-dataset"


def uniform_episode(env: Env, rng: np.random.Generator, forced: tuple[int, ...] | None = None) -> Episode:
    """Roll out one episode with every agent acting uniformly at random (or a fixed first joint action)."""
    spec = env.spec
    res = env.reset()
    obs, states, actions, rewards, dones = [np.stack(res.obs)], [res.state], [], [], []
    while not res.done:
        if forced is not None and env.t == 0:
            joint = np.array(forced)
        else:
            joint = rng.integers(0, spec.n_actions, size=spec.n_agents)
        res = env.step(joint)
        obs.append(np.stack(res.obs))
        states.append(res.state)
        actions.append(joint)
        rewards.append(res.reward)
        dones.append(1.0 if res.done else 0.0)
    return Episode(np.stack(obs), np.stack(states), np.array(actions, dtype=np.int64),
                   np.array(rewards), np.array(dones))


def make_uniform_episodes(env: Env, episodes: int, seed: int, exhaustive: bool = False) -> list[Episode]:
    """``episodes`` epsilon=1 episodes; ``exhaustive`` cycles the matrix-game joint actions evenly."""
    if episodes < 1:
        raise ContractError("episodes must be positive")
    rng = np.random.default_rng(seed)
    if not exhaustive:
        return [uniform_episode(env, rng) for _ in range(episodes)]
    if not isinstance(env, MatrixGame):
        raise ContractError("exhaustive mode is only defined for matrix games")
    joint = list(env.joint_actions())
    if episodes < len(joint):
        raise ContractError(f"exhaustive mode needs at least {len(joint)} episodes, got {episodes}")
    return [uniform_episode(env, rng, joint[i % len(joint)]) for i in range(episodes)]


def _fmt(x) -> str:
    return repr(float(x))


def write_dataset(path, env_name: str, spec: EnvSpec, episodes: list[Episode]) -> None:
    lines = [f"{MAGIC} env={env_name} {spec.header()}"]
    for k, ep in enumerate(episodes):
        for t in range(len(ep)):
            fields = [str(k), str(t)]
            fields += [_fmt(x) for x in ep.state[t]]
            fields += [_fmt(x) for x in ep.obs[t].reshape(-1)]
            fields += [str(int(a)) for a in ep.actions[t]]
            fields += [_fmt(ep.rewards[t]), _fmt(ep.dones[t])]
            lines.append(" ".join(fields))
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _parse_header(line: str) -> tuple[str, EnvSpec]:
    if not line.startswith(MAGIC):
        raise UsageError("dataset file does not start with the qplex-dataset header")
    kv = {}
    for tok in line[len(MAGIC):].split():
        if "=" not in tok:
            raise UsageError(f"malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        kv[k] = v
    try:
        spec = EnvSpec(n_agents=int(kv["n_agents"]), n_actions=int(kv["n_actions"]), obs_dim=int(kv["obs_dim"]),
                       state_dim=int(kv["state_dim"]), horizon=int(kv["horizon"]), gamma=float(kv["gamma"]))
        return kv["env"], spec
    except KeyError as exc:
        raise UsageError(f"dataset header is missing {exc.args[0]!r}") from None


def read_dataset(path) -> tuple[str, EnvSpec, list[Episode]]:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise UsageError(f"{path}: empty dataset file")
    env_name, spec = _parse_header(lines[0])
    n, od, sd = spec.n_agents, spec.obs_dim, spec.state_dim
    width = 2 + sd + n * od + n + 2
    rows: dict[int, list] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != width:
            raise UsageError(f"{path}:{lineno}: expected {width} fields, got {len(parts)}")
        try:
            ep, t = int(parts[0]), int(parts[1])
            vals = [float(x) for x in parts[2:]]
        except ValueError:
            raise UsageError(f"{path}:{lineno}: non-numeric field") from None
        steps = rows.setdefault(ep, [])
        if t != len(steps):
            raise UsageError(f"{path}:{lineno}: episode {ep} step {t} out of order")
        steps.append(vals)
    episodes = []
    for ep in sorted(rows):
        arr = np.array(rows[ep])
        state = arr[:, :sd]
        obs = arr[:, sd:sd + n * od].reshape(-1, n, od)
        actions = arr[:, sd + n * od:sd + n * od + n].astype(np.int64)
        rewards, dones = arr[:, -2], arr[:, -1]
        episodes.append(Episode(np.concatenate([obs, obs[-1:]]), np.concatenate([state, state[-1:]]),
                                actions, rewards.copy(), dones.copy()))
    if not episodes:
        raise UsageError(f"{path}: dataset has no transitions")
    return env_name, spec, episodes


def make_uniform_dataset(env_name: str, episodes: int, seed: int, path, exhaustive: bool = False) -> list[Episode]:
    """Collect a uniform dataset for ``env_name`` and write it to ``path``."""
    env = make_env(env_name)
    eps = make_uniform_episodes(env, episodes, seed, exhaustive)
    write_dataset(path, env.name, env.spec, eps)
    return eps
