"""Central-difference oracles for the autodiff engine.

Both checkers compare the analytic derivative along a random direction with
``(f(x + h d) - f(x - h d)) / 2h``.  Stop-gradient outputs are recorded at the
base point and replayed at the perturbed points, so the probed function is the
one whose gradient the engine actually defines.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_function(fn: Callable[[list[Tensor]], Tensor], inputs: Sequence[np.ndarray], rng: np.random.Generator,
                   h: float = 1e-5) -> float:
    """Relative error of d fn / d inputs along one random direction; ``fn`` must return a scalar."""
    leaves = [ad.tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    with ad.stop_gradient_tape() as tape:
        out = fn(leaves)
    ad.backward(out)
    dirs = [rng.standard_normal(np.shape(x)) for x in inputs]
    analytic = sum(float(np.sum(t.grad * d)) for t, d in zip(leaves, dirs) if t.grad is not None)

    def at(sign: float) -> float:
        with ad.no_grad(), ad.stop_gradient_tape(tape):
            moved = [ad.tensor(np.asarray(x, dtype=np.float64) + sign * h * d) for x, d in zip(inputs, dirs)]
            return float(fn(moved).data)

    numeric = (at(1.0) - at(-1.0)) / (2 * h)
    return relative_error(analytic, numeric)


def check_parameters(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], rng: np.random.Generator,
                     h: float = 1e-5) -> float:
    """Same check for a loss that closes over existing parameter tensors (perturbed in place)."""
    for p in params:
        p.grad = None
    with ad.stop_gradient_tape() as tape:
        loss = loss_fn()
    ad.backward(loss)
    dirs = [rng.standard_normal(p.shape) for p in params]
    analytic = sum(float(np.sum(p.grad * d)) for p, d in zip(params, dirs) if p.grad is not None)
    base = [p.data.copy() for p in params]

    def at(sign: float) -> float:
        for p, b, d in zip(params, base, dirs):
            p.data[...] = b + sign * h * d
        with ad.no_grad(), ad.stop_gradient_tape(tape):
            return float(loss_fn().data)

    try:
        numeric = (at(1.0) - at(-1.0)) / (2 * h)
    finally:
        for p, b in zip(params, base):
            p.data[...] = b
        for p in params:
            p.grad = None
    return relative_error(analytic, numeric)
