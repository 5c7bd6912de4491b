"""TD learning loop shared by the online (epsilon-greedy, FIFO replay) and offline (frozen dataset) regimes."""
from __future__ import annotations

import collections
import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .agents import AgentNetwork, agent_input_dim, build_agent_inputs, greedy_action
from .envs import Env, MatrixGame
from .errors import ContractError, NumericalFailure
from .layers import Module, freeze, params_of
from .mixers import joint_greedy, make_mixer

log = logging.getLogger(__name__)


@dataclass
class Episode:
    """One episode; ``obs``/``state`` carry ``T + 1`` entries, the rest ``T``."""

    obs: np.ndarray  # [T+1, n_agents, obs_dim]
    state: np.ndarray  # [T+1, state_dim]
    actions: np.ndarray  # [T, n_agents] int
    rewards: np.ndarray  # [T]
    dones: np.ndarray  # [T] 1.0 where the episode terminated after this step

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())


@dataclass
class Batch:
    obs: np.ndarray  # [B, T+1, n, obs_dim]
    state: np.ndarray  # [B, T+1, state_dim]
    actions: np.ndarray  # [B, T, n]
    rewards: np.ndarray  # [B, T]
    dones: np.ndarray  # [B, T]
    mask: np.ndarray  # [B, T] 1 for real timesteps, 0 for padding

    @classmethod
    def from_episodes(cls, episodes: list[Episode]) -> "Batch":
        if not episodes:
            raise ContractError("cannot build an empty batch")
        t_max = max(len(e) for e in episodes)
        b = len(episodes)
        first = episodes[0]
        obs = np.zeros((b, t_max + 1) + first.obs.shape[1:])
        state = np.zeros((b, t_max + 1, first.state.shape[1]))
        actions = np.zeros((b, t_max, first.actions.shape[1]), dtype=np.int64)
        rewards = np.zeros((b, t_max))
        dones = np.ones((b, t_max))
        mask = np.zeros((b, t_max))
        for i, e in enumerate(episodes):
            t = len(e)
            obs[i, :t + 1] = e.obs
            state[i, :t + 1] = e.state
            actions[i, :t] = e.actions
            rewards[i, :t] = e.rewards
            dones[i, :t] = e.dones
            mask[i, :t] = 1.0
        return cls(obs, state, actions, rewards, dones, mask)


class ReplayBuffer:
    """FIFO episode store (``online``) or an immutable dataset (``offline``)."""

    def __init__(self, capacity: int = 5000, mode: str = "online"):
        if mode not in ("online", "offline"):
            raise ContractError(f"unknown buffer mode {mode!r}")
        self.capacity = capacity
        self.mode = mode
        self._episodes: collections.deque[Episode] = collections.deque(maxlen=capacity if mode == "online" else None)
        self._frozen = False

    @classmethod
    def frozen(cls, episodes: list[Episode]) -> "ReplayBuffer":
        if not episodes:
            raise ContractError("offline dataset is empty")
        buf = cls(capacity=len(episodes), mode="offline")
        buf._episodes.extend(episodes)
        buf._frozen = True
        return buf

    def __len__(self) -> int:
        return len(self._episodes)

    def add(self, episode: Episode) -> None:
        if self._frozen:
            raise ContractError("offline buffer is read-only")
        self._episodes.append(episode)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Episode]:
        """Uniform sample without replacement; the whole buffer when it is smaller than ``batch_size``."""
        n = len(self._episodes)
        if n == 0:
            raise ContractError("cannot sample from an empty buffer")
        if n <= batch_size:
            return list(self._episodes)
        idx = rng.choice(n, size=batch_size, replace=False)
        return [self._episodes[i] for i in idx]


@dataclass
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    anneal_steps: int = 50_000
    mode: str = "linear"  # or "one"

    def __post_init__(self):
        if self.mode not in ("linear", "one"):
            raise ContractError(f"unknown epsilon mode {self.mode!r}")

    def value(self, env_steps: int) -> float:
        if self.mode == "one":
            return 1.0
        frac = min(1.0, env_steps / max(1, self.anneal_steps))
        return self.start + frac * (self.end - self.start)


@dataclass
class LearnerConfig:
    algo: str = "qplex"
    gamma: float = 0.99
    lr: float = 5e-4
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    grad_clip: float = 10.0
    batch_size: int = 32
    target_update_episodes: int = 200
    hidden_dim: int = 64
    recurrent: bool = False
    lambda_layers: int = 3
    lambda_heads: int = 10
    mixer_hidden: int = 64
    qmix_embed: int = 32
    time_feature: bool = False


class Learner:
    """Owns the online and target networks and performs TD updates."""

    def __init__(self, env: Env, cfg: LearnerConfig, rng: np.random.Generator):
        spec = env.spec
        self.env_spec = spec
        self.cfg = cfg
        self.n_agents, self.n_actions = spec.n_agents, spec.n_actions
        in_dim = agent_input_dim(spec.obs_dim, spec.n_actions, spec.n_agents, time_feature=cfg.time_feature)
        self.state_dim = spec.state_dim + (1 if cfg.time_feature else 0)
        self.agent = AgentNetwork(in_dim, spec.n_actions, rng, cfg.hidden_dim, cfg.recurrent)
        self.mixer = make_mixer(cfg.algo, self.state_dim, spec.n_agents, spec.n_actions, rng,
                                cfg.lambda_layers, cfg.lambda_heads, cfg.mixer_hidden, cfg.qmix_embed)
        self.target_agent = freeze(copy.deepcopy(self.agent))
        self.target_mixer = freeze(copy.deepcopy(self.mixer))
        self.params = params_of([self.agent, self.mixer])
        self.optimizer = ad.RMSProp(self.params, lr=cfg.lr, alpha=cfg.rms_alpha, eps=cfg.rms_eps)
        self.training_episodes = 0
        self.syncs = 0
        self.updates = 0

    # -- inputs ----------------------------------------------------------

    def _time_frac(self, t: np.ndarray) -> np.ndarray | None:
        return t / self.env_spec.horizon if self.cfg.time_feature else None

    def mixer_state(self, state: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
        if not self.cfg.time_feature:
            return state
        frac = np.broadcast_to(np.asarray(t, dtype=np.float64) / self.env_spec.horizon, state.shape[:-1])
        return np.concatenate([state, frac[..., None]], axis=-1)

    def agent_inputs(self, obs: np.ndarray, last_actions: np.ndarray, t) -> np.ndarray:
        frac = self._time_frac(np.asarray(t, dtype=np.float64)) if self.cfg.time_feature else None
        return build_agent_inputs(obs, last_actions, self.n_actions, time_frac=frac)

    def batch_agent_q(self, agent: AgentNetwork, batch: Batch, t_slice: slice) -> ad.Tensor:
        """Agent Q-values ``[B, T', n, A]`` for the timesteps in ``t_slice`` of ``batch``."""
        b, t1 = batch.obs.shape[:2]
        last = np.concatenate([np.full((b, 1, self.n_agents), -1, dtype=np.int64), batch.actions], axis=1)
        ts = np.arange(t1)
        if agent.recurrent:
            # roll the recurrence from t=0 so hidden states match acting-time ones
            hidden = agent.init_hidden(b * self.n_agents)
            steps = []
            for t in range(t1):
                x = self.agent_inputs(batch.obs[:, t], last[:, t], np.full((b,), t))
                q, hidden = agent(ad.tensor(x.reshape(b * self.n_agents, -1)), hidden)
                steps.append(ad.reshape(q, (b, 1, self.n_agents, self.n_actions)))
            q_all = ad.concat(steps, axis=1)
            return q_all[:, t_slice]
        sel = ts[t_slice]
        tt = np.broadcast_to(sel, (b, len(sel)))
        x = self.agent_inputs(batch.obs[:, sel], last[:, sel], tt)
        q, _ = agent(ad.tensor(x.reshape(-1, x.shape[-1])))
        return ad.reshape(q, (b, len(sel), self.n_agents, self.n_actions))

    # -- loss --------------------------------------------------------------

    def _feedforward_rows(self, batch: Batch):
        """Flatten a batch into unique transition rows with multiplicities.

        Feedforward agents see only the current inputs, so duplicate rows give
        identical terms; summing each unique row once, weighted by its count,
        leaves the loss and its gradient unchanged.
        """
        b, t = batch.rewards.shape
        n, a = self.n_agents, self.n_actions
        last = np.concatenate([np.full((b, 1, n), -1, dtype=np.int64), batch.actions], axis=1)
        ts = np.broadcast_to(np.arange(t + 1), (b, t + 1))
        x = self.agent_inputs(batch.obs, last, ts)  # [B, T+1, n, in]
        st = self.mixer_state(batch.state, ts)  # [B, T+1, sd]
        keep = batch.mask.reshape(-1) > 0
        cols = [
            x[:, :t].reshape(b * t, -1), batch.actions.reshape(b * t, n).astype(np.float64),
            st[:, :t].reshape(b * t, -1), x[:, 1:].reshape(b * t, -1), st[:, 1:].reshape(b * t, -1),
            batch.rewards.reshape(-1, 1), batch.dones.reshape(-1, 1),
        ]
        key = np.ascontiguousarray(np.concatenate(cols, axis=1)[keep])
        # dict over raw row bytes: far cheaper than a lexicographic sort of float rows
        first: dict[bytes, int] = {}
        owner = []
        slot = np.empty(len(key), dtype=np.int64)
        width = key.shape[1] * key.itemsize
        raw = key.tobytes()
        for i in range(len(key)):
            k = raw[i * width:(i + 1) * width]
            j = first.get(k)
            if j is None:
                j = first[k] = len(owner)
                owner.append(i)
            slot[i] = j
        counts = np.bincount(slot)
        uniq = key[owner]
        widths = np.cumsum([c.shape[1] for c in cols])[:-1]
        x_t, acts, s_t, x_n, s_n, r, d = np.split(uniq, widths, axis=1)
        in_dim = x.shape[-1]
        return (x_t.reshape(-1, in_dim), acts.astype(np.int64), s_t, x_n.reshape(-1, in_dim), s_n,
                r[:, 0], d[:, 0], counts.astype(np.float64))

    def td_loss(self, batch: Batch) -> ad.Tensor:
        """Weighted mean squared TD error against the frozen target networks."""
        n, a = self.n_agents, self.n_actions
        if self.agent.recurrent:
            b, t = batch.rewards.shape
            rows = b * t
            ts = np.broadcast_to(np.arange(t + 1), (b, t + 1))
            q_flat = ad.reshape(self.batch_agent_q(self.agent, batch, slice(0, t)), (rows, n, a))
            acts = batch.actions.reshape(rows, n)
            state = self.mixer_state(batch.state[:, :t], ts[:, :t]).reshape(rows, -1)
            next_state = self.mixer_state(batch.state[:, 1:], ts[:, 1:]).reshape(rows, -1)
            with ad.no_grad():
                tq_flat = ad.reshape(self.batch_agent_q(self.target_agent, batch, slice(1, t + 1)), (rows, n, a))
            rewards, dones = batch.rewards.reshape(-1), batch.dones.reshape(-1)
            weights = batch.mask.reshape(-1)
        else:
            x_t, acts, state, x_n, next_state, rewards, dones, weights = self._feedforward_rows(batch)
            rows = len(weights)
            q_flat = ad.reshape(self.agent(ad.tensor(x_t))[0], (rows, n, a))
            with ad.no_grad():
                tq_flat = ad.reshape(self.target_agent(ad.tensor(x_n))[0], (rows, n, a))
        q_tot = self.mixer(q_flat, acts, ad.tensor(state))

        with ad.no_grad():
            greedy = joint_greedy(tq_flat.data)
            v_next = self.target_mixer(tq_flat, greedy, ad.tensor(next_state)).data

        target = rewards + self.cfg.gamma * (1.0 - dones) * v_next
        resid = q_tot - ad.tensor(target)
        loss = (ad.square(resid) * ad.tensor(weights)).sum() * (1.0 / weights.sum())
        if not np.isfinite(loss.data):
            raise NumericalFailure(
                f"TD loss is {float(loss.data)} after {self.updates} updates; "
                f"max |Q_tot|={np.max(np.abs(q_tot.data)):.3g}, max |target|={np.max(np.abs(target)):.3g}")
        return loss

    def update(self, batch: Batch) -> float:
        self.optimizer.zero_grad()
        loss = self.td_loss(batch)
        ad.backward(loss)
        ad.clip_grad_norm(self.params, self.cfg.grad_clip)
        ad.sgd_like_step(self.params, self.optimizer)
        self.updates += 1
        return float(loss.data)

    def finish_training_episode(self) -> None:
        """Advance the episode counter and hard-sync targets on the configured cadence."""
        self.training_episodes += 1
        sync_targets(self)

    # -- acting / evaluation -------------------------------------------------

    def act_q(self, obs: np.ndarray, last_actions: np.ndarray, t: int, hidden=None):
        with ad.no_grad():
            x = self.agent_inputs(obs, last_actions, t)
            q, hidden = self.agent(ad.tensor(x), hidden)
        return q.data, hidden

    def q_table(self, env: Env, agent: AgentNetwork | None = None, mixer: Module | None = None) -> np.ndarray:
        """Q_tot over probe inputs x every joint action.

        Shape ``[n_probe, A, ..., A]``.  Probe inputs are every probe state with
        the episode-start encoding, plus (for multi-step envs) every state paired
        with every previous joint action.  Feedforward agents only.
        """
        agent = agent or self.agent
        mixer = mixer or self.mixer
        n, a = self.n_agents, self.n_actions
        lasts = [np.full(n, -1)]
        if env.spec.horizon > 1:
            lasts += [np.array(j) for j in env.joint_actions()]
        probes = [(s, la) for s in env.probe_states() for la in lasts]
        joint = np.array(list(env.joint_actions()))
        with ad.no_grad():
            obs = np.stack([np.stack(env.obs_vectors(s)) for s, _ in probes])
            last = np.stack([la for _, la in probes])
            x = self.agent_inputs(obs, last, 0)
            q, _ = agent(ad.tensor(x.reshape(-1, x.shape[-1])))
            q = q.data.reshape(len(probes), n, a)
            rows_q = np.repeat(q, len(joint), axis=0)
            rows_a = np.tile(joint, (len(probes), 1))
            states = np.stack([env.state_vector(s) for s, _ in probes])
            rows_s = np.repeat(self.mixer_state(states, 0), len(joint), axis=0)
            q_tot = mixer(ad.tensor(rows_q), rows_a, ad.tensor(rows_s)).data
        return q_tot.reshape((len(probes),) + (a,) * n)


def sync_targets(learner: Learner, force: bool = False) -> bool:
    """Copy online parameters into the target networks every ``target_update_episodes`` episodes."""
    period = learner.cfg.target_update_episodes
    if force or (learner.training_episodes > 0 and learner.training_episodes % period == 0):
        learner.target_agent.load_from(learner.agent)
        learner.target_mixer.load_from(learner.mixer)
        if not force:
            learner.syncs += 1
        return True
    return False


def collect_episode(env: Env, learner: Learner, epsilon: float, rng: np.random.Generator) -> Episode:
    """Roll out one episode; each agent explores uniformly with probability ``epsilon``."""
    spec = env.spec
    res = env.reset()
    obs, states, actions, rewards, dones = [np.stack(res.obs)], [res.state], [], [], []
    last = np.full(spec.n_agents, -1)
    hidden = None
    # parameters are fixed during a rollout, so a feedforward agent's outputs can be memoised
    memo: dict | None = None if learner.cfg.recurrent else {}
    while not res.done:
        ob = np.stack(res.obs)
        if memo is None:
            q, hidden = learner.act_q(ob, last, env.t, hidden)
        else:
            key = (ob.tobytes(), last.tobytes(), env.t if learner.cfg.time_feature else 0)
            q = memo.get(key)
            if q is None:
                q = memo[key] = learner.act_q(ob, last, env.t)[0]
        greedy = greedy_action(q)
        explore = rng.random(spec.n_agents) < epsilon
        random_actions = rng.integers(0, spec.n_actions, size=spec.n_agents)
        joint = np.where(explore, random_actions, greedy)
        res = env.step(joint)
        obs.append(np.stack(res.obs))
        states.append(res.state)
        actions.append(joint)
        rewards.append(res.reward)
        dones.append(1.0 if res.done else 0.0)
        last = joint.astype(np.int64)
    return Episode(np.stack(obs), np.stack(states), np.array(actions, dtype=np.int64),
                   np.array(rewards), np.array(dones))


@dataclass
class EvalResult:
    mean_return: float
    returns: list[float]
    joint_actions: list[tuple[int, ...]]  # greedy joint action at the first step of each episode
    q_table: np.ndarray | None = None


def evaluate_greedy(env: Env, learner: Learner, n_episodes: int = 32) -> EvalResult:
    """Greedy decentralised rollouts; matrix games also report the full Q_tot table."""
    returns, firsts = [], []
    rng = np.random.default_rng(0)  # unused at epsilon=0, keeps the signature uniform
    for _ in range(n_episodes):
        ep = collect_episode(env, learner, 0.0, rng)
        returns.append(ep.total_return)
        firsts.append(tuple(int(a) for a in ep.actions[0]))
    table = None
    if isinstance(env, MatrixGame) and not learner.cfg.recurrent:
        table = learner.q_table(env)[0]
    return EvalResult(float(np.mean(returns)), returns, firsts, table)


def q_inf_norm(env: Env, learner: Learner) -> float:
    if learner.cfg.recurrent:
        return float("nan")
    return float(np.max(np.abs(learner.q_table(env))))


@dataclass
class LogRow:
    step: int
    episode: int
    mean_return: float
    q_inf_norm: float
    loss: float
    wall_time: float


@dataclass
class RunLog:
    rows: list[LogRow] = field(default_factory=list)
    q_table: np.ndarray | None = None
    final_eval: EvalResult | None = None
    stopped_early: bool = False

    def append(self, row: LogRow) -> None:
        if self.rows and row.step <= self.rows[-1].step:
            raise ContractError("log steps must be strictly increasing")
        self.rows.append(row)


def _record(log_: RunLog, env: Env, learner: Learner, step: int, episode: int, loss: float,
            t0: float, n_eval: int, on_row=None) -> EvalResult:
    res = evaluate_greedy(env, learner, n_eval)
    row = LogRow(step, episode, res.mean_return, q_inf_norm(env, learner), loss, time.perf_counter() - t0)
    log_.append(row)
    log_.q_table = res.q_table
    log_.final_eval = res
    if on_row is not None:
        on_row(row)
    log.debug("step=%d episode=%d return=%.3f qinf=%.3f loss=%.4g", step, episode, row.mean_return,
              row.q_inf_norm, loss)
    return res


def train_online(env: Env, learner: Learner, rng: np.random.Generator, total_env_steps: int,
                 epsilon: EpsilonSchedule, buffer_capacity: int = 5000, updates_per_episode: int = 2,
                 eval_every: int = 10_000, eval_episodes: int = 32, stop_at_return: float | None = None,
                 on_row=None) -> RunLog:
    """Collect an episode, store it, run ``updates_per_episode`` updates, repeat.

    Greedy evaluation happens at step 0 and whenever the env-step count crosses a
    multiple of ``eval_every`` that does not exceed ``total_env_steps`` (the last
    episode may overshoot the budget; that overshoot is not evaluated).
    """
    buffer = ReplayBuffer(buffer_capacity, "online")
    run = RunLog()
    t0 = time.perf_counter()
    steps, episodes, loss = 0, 0, float("nan")
    _record(run, env, learner, 0, 0, loss, t0, eval_episodes, on_row)
    next_eval = eval_every
    while steps < total_env_steps:
        ep = collect_episode(env, learner, epsilon.value(steps), rng)
        buffer.add(ep)
        steps += len(ep)
        episodes += 1
        for _ in range(updates_per_episode):
            loss = learner.update(Batch.from_episodes(buffer.sample(learner.cfg.batch_size, rng)))
        learner.finish_training_episode()
        if next_eval <= steps and next_eval <= total_env_steps:
            next_eval = (steps // eval_every + 1) * eval_every
            res = _record(run, env, learner, steps, episodes, loss, t0, eval_episodes, on_row)
            if stop_at_return is not None and res.mean_return >= stop_at_return:
                run.stopped_early = True
                break
    return run


def train_offline(env: Env, learner: Learner, rng: np.random.Generator, dataset: list[Episode],
                  total_iterations: int, updates_per_episode: int = 2, eval_every: int = 1,
                  eval_episodes: int = 32, stop_at_return: float | None = None, on_row=None) -> RunLog:
    """Same update rule over a frozen dataset.

    One iteration is ``target_update_episodes`` training episodes, each consisting
    of ``updates_per_episode`` updates on freshly sampled batches; targets sync
    once per iteration.  Evaluation every ``eval_every`` iterations.
    """
    buffer = ReplayBuffer.frozen(dataset)
    run = RunLog()
    t0 = time.perf_counter()
    period = learner.cfg.target_update_episodes
    loss = float("nan")
    _record(run, env, learner, 0, 0, loss, t0, eval_episodes, on_row)
    for it in range(1, total_iterations + 1):
        for _ in range(period):
            for _ in range(updates_per_episode):
                loss = learner.update(Batch.from_episodes(buffer.sample(learner.cfg.batch_size, rng)))
            learner.finish_training_episode()
        if it % eval_every == 0:
            res = _record(run, env, learner, learner.updates, learner.training_episodes, loss, t0,
                          eval_episodes, on_row)
            if stop_at_return is not None and res.mean_return >= stop_at_return:
                run.stopped_early = True
                break
    return run
