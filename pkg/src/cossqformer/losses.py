"""MSE, soft-DTW and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import numkit as nk
from .numkit import ShapeError, Tensor


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.5
    gamma: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


def _as_series(x: Tensor, what: str) -> Tensor:
    if x.ndim == 1:
        return x
    if x.ndim == 2 and 1 in x.shape:
        return nk.reshape(x, (x.size,))
    raise ShapeError(f"{what}: expected a 1-D series, got shape {x.shape}")


def mse(y: Tensor, y_hat: Tensor) -> Tensor:
    y, y_hat = _as_series(y, "mse"), _as_series(y_hat, "mse")
    if y.shape != y_hat.shape:
        raise ShapeError(f"mse: lengths {y.size} and {y_hat.size} differ")
    diff = nk.sub(y_hat, y)
    return nk.mean(nk.mul(diff, diff))


def soft_dtw(y: Tensor, y_hat: Tensor, gamma: float = 1.0) -> Tensor:
    """Soft-DTW discrepancy with squared-difference ground cost.

    The gradient comes from the reverse recursion over expected alignments,
    not from differentiating the forward table. Values may be negative.
    """
    if not gamma > 0.0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    y, y_hat = _as_series(y, "soft_dtw"), _as_series(y_hat, "soft_dtw")
    if y.size == 0 or y_hat.size == 0:
        raise ShapeError("soft_dtw: empty series")
    kern = kernels.backend()
    a = np.ascontiguousarray(y.data)
    b = np.ascontiguousarray(y_hat.data)
    table = kern.softdtw_forward(a, b, float(gamma))
    t1, t2 = a.size, b.size

    def back(g):
        align = kern.softdtw_backward(a, b, table, float(gamma))
        diff = a[:, None] - b[None, :]
        gy = 2.0 * (align * diff).sum(axis=1)
        gy_hat = -2.0 * (align * diff).sum(axis=0)
        return float(g) * gy, float(g) * gy_hat

    return nk.record(np.asarray(table[t1, t2]), (y, y_hat), back)


def hybrid_loss(y: Tensor, y_hat: Tensor, config: LossConfig = LossConfig()) -> Tensor:
    """``mse + lam * soft_dtw``."""
    base = mse(y, y_hat)
    if config.lam == 0.0:
        return base
    return nk.add(base, nk.scale(soft_dtw(y, y_hat, config.gamma), config.lam))
