"""Per-agent action-value networks and the individual dueling split."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, DomainError
from .layers import GRUCell, Linear, Module


def agent_input_dim(obs_dim: int, n_actions: int, n_agents: int, shared: bool = True,
                    time_feature: bool = False) -> int:
    return obs_dim + n_actions + (n_agents if shared else 0) + (1 if time_feature else 0)


def build_agent_inputs(obs: np.ndarray, last_actions: np.ndarray, n_actions: int, shared: bool = True,
                       time_frac: np.ndarray | None = None) -> np.ndarray:
    """Stack per-agent network inputs.

    ``obs`` is ``[..., n_agents, obs_dim]``; ``last_actions`` is ``[..., n_agents]``
    with -1 meaning "no previous action" (encoded as an all-zero one-hot).
    """
    obs = np.asarray(obs, dtype=np.float64)
    last_actions = np.asarray(last_actions, dtype=np.int64)
    lead = obs.shape[:-1]
    onehot = np.zeros(lead + (n_actions,))
    valid = last_actions >= 0
    np.put_along_axis(onehot, np.where(valid, last_actions, 0)[..., None], valid[..., None].astype(float), axis=-1)
    parts = [obs, onehot]
    if shared:
        n_agents = lead[-1]
        parts.append(np.broadcast_to(np.eye(n_agents), lead + (n_agents,)))
    if time_frac is not None:
        parts.append(np.broadcast_to(np.asarray(time_frac, dtype=np.float64)[..., None, None], lead + (1,)))
    return np.concatenate(parts, axis=-1)


class AgentNetwork(Module):
    """Shared Q-network: Linear -> ReLU -> (GRU cell) -> Linear over ``n_actions`` outputs."""

    def __init__(self, input_dim: int, n_actions: int, rng: np.random.Generator,
                 hidden_dim: int = 64, recurrent: bool = False):
        self.input_dim = input_dim
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim
        self.recurrent = recurrent
        self.fc1 = Linear(input_dim, hidden_dim, rng)
        self.rnn = GRUCell(hidden_dim, hidden_dim, rng) if recurrent else None
        self.fc2 = Linear(hidden_dim, n_actions, rng)

    def init_hidden(self, batch: int) -> Tensor:
        return ad.tensor(np.zeros((batch, self.hidden_dim)))

    def __call__(self, inputs: Tensor, hidden: Tensor | None = None) -> tuple[Tensor, Tensor | None]:
        return agent_forward(self, inputs, hidden)


def agent_forward(net: AgentNetwork, inputs, hidden: Tensor | None = None) -> tuple[Tensor, Tensor | None]:
    """Q-values ``[N, n_actions]`` and the next hidden state (unchanged for feedforward nets)."""
    x = ad.as_tensor(inputs)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(f"agent input must be [N, {net.input_dim}], got {x.shape}")
    h = ad.relu(net.fc1(x))
    if net.recurrent:
        if hidden is None:
            hidden = net.init_hidden(x.shape[0])
        if hidden.shape != (x.shape[0], net.hidden_dim):
            raise DimensionError(f"hidden state must be {(x.shape[0], net.hidden_dim)}, got {hidden.shape}")
        hidden = net.rnn(h, hidden)
        h = hidden
    return net.fc2(h), hidden


def local_dueling(q: Tensor) -> tuple[Tensor, Tensor]:
    """Split Q over the last axis into V = max_a Q and A = Q - V (so max A == 0)."""
    q = ad.as_tensor(q)
    if q.ndim == 0 or q.shape[-1] == 0:
        raise DomainError("local_dueling needs at least one action")
    v = q.max(axis=-1, keepdims=True)
    adv = q - ad.broadcast_to(v, q.shape)
    return ad.reshape(v, q.shape[:-1]), adv


def greedy_action(q) -> int | np.ndarray:
    """Argmax over the last axis, lowest index on ties."""
    q = np.asarray(q.data if isinstance(q, Tensor) else q)
    if q.shape[-1] == 0:
        raise DomainError("greedy_action needs at least one action")
    a = np.argmax(q, axis=-1)
    return int(a) if a.ndim == 0 else a
