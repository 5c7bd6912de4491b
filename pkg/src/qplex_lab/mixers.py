"""Joint action-value mixers: duplex dueling (QPLEX), VDN, QMIX and the lambda==1 ablation.

All mixers share one call signature::

    mixer(agent_q, actions, state) -> Tensor[N]

where ``agent_q`` is ``[N, n_agents, n_actions]``, ``actions`` an integer array
``[N, n_agents]`` and ``state`` ``[N, state_dim]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .agents import local_dueling
from .autodiff import Tensor
from .errors import ContractError, DimensionError, InvariantViolation
from .layers import MLP, HeadStack, Linear, Module

EPS_POSITIVE = 1e-10


def _onehot_actions(actions, n_actions: int) -> np.ndarray:
    return ad.one_hot(np.asarray(actions, dtype=np.int64), n_actions)


def _chosen(values: Tensor, onehot: np.ndarray) -> Tensor:
    return (values * ad.tensor(onehot)).sum(axis=-1)


def _expand_last(x: Tensor, n: int) -> Tensor:
    return ad.broadcast_to(ad.reshape(x, x.shape + (1,)), x.shape + (n,))


def joint_greedy(agent_q) -> tuple[int, ...] | np.ndarray:
    """Per-agent argmax (lowest index on ties); a tuple for a single ``[n_agents, n_actions]`` input."""
    q = np.asarray(agent_q.data if isinstance(agent_q, Tensor) else agent_q)
    a = np.argmax(q, axis=-1)
    return tuple(int(x) for x in a) if a.ndim == 1 else a


# ---------------------------------------------------------------------------
# duplex dueling


class TransformationNet(Module):
    """Positive weight head ``w`` and bias head ``b`` over the global state, one output per agent."""

    def __init__(self, state_dim: int, n_agents: int, rng: np.random.Generator,
                 n_layers: int = 3, hidden: int = 64):
        self.weight_head = MLP(state_dim, n_agents, hidden, n_layers, rng, out_act="abs")
        self.bias_head = MLP(state_dim, n_agents, hidden, n_layers, rng)

    def weights(self, state: Tensor) -> Tensor:
        w = self.weight_head(state)
        return w + ad.tensor(np.full(w.shape, EPS_POSITIVE))

    def biases(self, state: Tensor) -> Tensor:
        return self.bias_head(state)


def transform(trans: TransformationNet, state, v: Tensor, adv: Tensor) -> tuple[Tensor, Tensor]:
    """Lift local ``V_i`` ``[N, n]`` and ``A_i`` ``[N, n, A]`` to state-conditioned values.

    ``V_i(s) = w_i(s) V_i + b_i(s)`` and ``A_i(s, .) = w_i(s) A_i(.)`` with ``w_i > 0``.
    """
    state = ad.as_tensor(state)
    w = trans.weights(state)
    if not np.all(w.data > 0):
        raise InvariantViolation("transformation weight is not strictly positive")
    b = trans.biases(state)
    if w.shape != v.shape:
        raise DimensionError(f"transformation emits {w.shape} but V has shape {v.shape}")
    return w * v + b, _expand_last(w, adv.shape[-1]) * adv


class AttentionLambdaNet(Module):
    """Importance weights ``lambda_i = sum_k lam_{i,k}(s, a) * phi_{i,k}(s) * ups_k(s) + eps``.

    ``lam`` and ``phi`` heads end in a sigmoid, ``ups`` in an absolute value.
    """

    def __init__(self, state_dim: int, n_agents: int, n_actions: int, rng: np.random.Generator,
                 n_layers: int = 3, n_heads: int = 10, hidden: int = 64):
        self.n_agents, self.n_actions, self.n_heads = n_agents, n_actions, n_heads
        action_dim = n_agents * n_actions
        self.action_heads = HeadStack(n_heads, state_dim + action_dim, n_agents, hidden, n_layers, rng,
                                      out_act="sigmoid")
        self.agent_heads = HeadStack(n_heads, state_dim, n_agents, hidden, n_layers, rng, out_act="sigmoid")
        self.key_heads = HeadStack(n_heads, state_dim, 1, hidden, n_layers, rng, out_act="abs")

    def head_terms(self, state: Tensor, action_onehots) -> tuple[Tensor, Tensor, Tensor]:
        """Raw ``lam [K,N,n]``, ``phi [K,N,n]`` and ``ups [K,N,1]`` head outputs."""
        acts = ad.as_tensor(action_onehots)
        n = state.shape[0]
        acts = ad.reshape(acts, (n, -1))
        lam = self.action_heads(ad.concat([state, acts], axis=1))
        phi = self.agent_heads(state)
        ups = self.key_heads(state)
        return lam, phi, ups


def lambda_forward(net: AttentionLambdaNet, state, action_onehots) -> Tensor:
    """Strictly positive importance weights ``[N, n_agents]``."""
    state = ad.as_tensor(state)
    lam, phi, ups = net.head_terms(state, action_onehots)
    ups = ups + ad.tensor(np.full(ups.shape, EPS_POSITIVE))
    weighted = lam * phi * ad.broadcast_to(ups, lam.shape)
    out = weighted.sum(axis=0)
    return out + ad.tensor(np.full(out.shape, EPS_POSITIVE))


@dataclass
class MixerOutput:
    q_tot: Tensor  # learning graph: sum Q_i(s, a_i) + sum (lambda_i - 1) * stop_grad(A_i(s, a_i))
    v_tot: Tensor
    a_tot: Tensor
    v: Tensor  # transformed per-agent values [N, n]
    adv: Tensor  # transformed per-agent advantages of the chosen actions [N, n]
    lam: Tensor  # [N, n]


def qplex_mix(v: Tensor, adv: Tensor, actions, lam: Tensor | None) -> MixerOutput:
    """Compose transformed per-agent ``V_i`` ``[N, n]`` and ``A_i`` ``[N, n, A]`` into the joint value.

    ``lam=None`` fixes every importance weight to 1.
    """
    onehot = _onehot_actions(actions, adv.shape[-1])
    if onehot.shape != adv.shape:
        raise DimensionError(f"actions {np.shape(actions)} do not index advantages {adv.shape}")
    adv_chosen = _chosen(adv, onehot)
    v_tot = v.sum(axis=1)
    q_sum = (v + adv_chosen).sum(axis=1)
    if lam is None:
        lam = ad.tensor(np.ones(adv_chosen.shape))
        return MixerOutput(q_sum, v_tot, adv_chosen.sum(axis=1), v, adv_chosen, lam)
    if lam.shape != adv_chosen.shape:
        raise DimensionError(f"lambda shape {lam.shape} != {adv_chosen.shape}")
    a_tot = (lam * adv_chosen).sum(axis=1)
    correction = ((lam - 1.0) * ad.stop_gradient(adv_chosen)).sum(axis=1)
    return MixerOutput(q_sum + correction, v_tot, a_tot, v, adv_chosen, lam)


class QPLEXMixer(Module):
    """Transformation followed by dueling mixing.

    ``lambda_mode="attention"`` is the full method; ``"one"`` forces every
    importance weight to 1, which reduces the joint value to a sum of the
    transformed individual Q-values.
    """

    def __init__(self, state_dim: int, n_agents: int, n_actions: int, rng: np.random.Generator,
                 n_layers: int = 3, n_heads: int = 10, hidden: int = 64, lambda_mode: str = "attention"):
        if lambda_mode not in ("attention", "one"):
            raise ContractError(f"unknown lambda mode {lambda_mode!r}")
        self.n_agents, self.n_actions = n_agents, n_actions
        self.lambda_mode = lambda_mode
        self.trans = TransformationNet(state_dim, n_agents, rng, n_layers, hidden)
        self.lambda_net = (AttentionLambdaNet(state_dim, n_agents, n_actions, rng, n_layers, n_heads, hidden)
                           if lambda_mode == "attention" else None)

    def forward(self, agent_q: Tensor, actions, state) -> MixerOutput:
        state = ad.as_tensor(state)
        v, adv = local_dueling(agent_q)
        v_tau, adv_tau = transform(self.trans, state, v, adv)
        lam = None
        if self.lambda_net is not None:
            lam = lambda_forward(self.lambda_net, state, _onehot_actions(actions, self.n_actions))
        return qplex_mix(v_tau, adv_tau, actions, lam)

    def __call__(self, agent_q: Tensor, actions, state) -> Tensor:
        return self.forward(agent_q, actions, state).q_tot


# ---------------------------------------------------------------------------
# baselines


def vdn_mix(q_chosen: Tensor) -> Tensor:
    """Sum of chosen individual Q-values over the agent axis (last axis)."""
    return ad.as_tensor(q_chosen).sum(axis=-1)


class VDNMixer(Module):
    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def __call__(self, agent_q: Tensor, actions, state=None) -> Tensor:
        return vdn_mix(_chosen(agent_q, _onehot_actions(actions, self.n_actions)))


class QMIXMixer(Module):
    """Two-layer monotone mixing network whose weights come from state hypernetworks."""

    def __init__(self, state_dim: int, n_agents: int, n_actions: int, rng: np.random.Generator,
                 embed_dim: int = 32):
        self.n_agents, self.n_actions, self.embed_dim = n_agents, n_actions, embed_dim
        self.hyper_w1 = Linear(state_dim, n_agents * embed_dim, rng)
        self.hyper_b1 = Linear(state_dim, embed_dim, rng)
        self.hyper_w2 = Linear(state_dim, embed_dim, rng)
        self.value = MLP(state_dim, 1, embed_dim, 2, rng)

    def __call__(self, agent_q: Tensor, actions, state) -> Tensor:
        return qmix_mix(self, state, _chosen(agent_q, _onehot_actions(actions, self.n_actions)))


def qmix_mix(mixer: QMIXMixer, state, q_chosen: Tensor) -> Tensor:
    """``Q_tot = elu(q W1 + b1) W2 + V(s)`` with ``W1 = |hyper_w1(s)|``, ``W2 = |hyper_w2(s)|``."""
    state = ad.as_tensor(state)
    q_chosen = ad.as_tensor(q_chosen)
    n, e = state.shape[0], mixer.embed_dim
    if q_chosen.shape != (n, mixer.n_agents):
        raise DimensionError(f"expected chosen Q of shape {(n, mixer.n_agents)}, got {q_chosen.shape}")
    w1 = ad.reshape(ad.absolute(mixer.hyper_w1(state)), (n, mixer.n_agents, e))
    b1 = ad.reshape(mixer.hyper_b1(state), (n, 1, e))
    w2 = ad.reshape(ad.absolute(mixer.hyper_w2(state)), (n, e, 1))
    hidden = ad.elu(ad.matmul(ad.reshape(q_chosen, (n, 1, mixer.n_agents)), w1) + b1)
    y = ad.reshape(ad.matmul(hidden, w2), (n,))
    return y + ad.reshape(mixer.value(state), (n,))


ALGOS = ("qplex", "vdn", "qmix", "qatten-ablation")


def make_mixer(algo: str, state_dim: int, n_agents: int, n_actions: int, rng: np.random.Generator,
               lambda_layers: int = 3, lambda_heads: int = 10, hidden: int = 64, qmix_embed: int = 32) -> Module:
    if algo == "qplex":
        return QPLEXMixer(state_dim, n_agents, n_actions, rng, lambda_layers, lambda_heads, hidden)
    if algo == "qatten-ablation":
        return QPLEXMixer(state_dim, n_agents, n_actions, rng, lambda_layers, lambda_heads, hidden,
                          lambda_mode="one")
    if algo == "vdn":
        return VDNMixer(n_actions)
    if algo == "qmix":
        return QMIXMixer(state_dim, n_agents, n_actions, rng, qmix_embed)
    raise ContractError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGOS)}")
