"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import ComputationTape, Tensor, backward


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)`` over all entries."""
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return num / den


def numeric_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], which: int, h: float = 1e-5):
    """Central differences of scalar ``fn(*inputs)`` w.r.t. ``inputs[which]``."""
    base = inputs[which].data
    grad = np.zeros(base.shape)
    flat = grad.reshape(-1)
    for k in range(base.size):
        vals = []
        for step in (h, -h):
            pert = base.copy().reshape(-1)
            pert[k] += step
            args = list(inputs)
            args[which] = Tensor(pert.reshape(base.shape))
            vals.append(fn(*args).item())
        flat[k] = (vals[0] - vals[1]) / (2.0 * h)
    return grad


def analytic_grads(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list:
    fresh = [Tensor(t.data, requires_grad=True) for t in inputs]
    with ComputationTape() as tape:
        out = fn(*fresh)
    backward(out, tape)
    return [np.zeros(t.shape) if t.grad is None else t.grad for t in fresh]


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> list:
    """Relative error between tape gradients and finite differences, per input."""
    analytic = analytic_grads(fn, inputs)
    return [
        relative_error(a, numeric_grad(fn, inputs, i, h)) for i, a in enumerate(analytic)
    ]
