"""Softmax, linear, cos and cos-square re-weighted attention.

Every re-weighted variant scores a query/key pair as
``relu(q_i) . relu(k_j) * w(i, j)`` and normalizes per query row. The
cos-square weight ``cos^2(pi (i - j) / 2M)`` factorizes into
``1/2 [1 + cos(pi i/M) cos(pi j/M) + sin(pi i/M) sin(pi j/M)]``, which is
what lets ``cos_square_attention_linear`` stream over keys in
``O((N + M) d1 d2)`` time instead of building the ``N x M`` score matrix.

Positions are 1-based in every angle; stored arrays stay 0-based.
Functions accept ``(N, d)`` matrices or ``(G, N, d)`` stacks of independent
groups (batch x heads).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import kernels
from . import numkit as nk
from .numkit import ContractError, ShapeError, Tensor


class Variant(str, enum.Enum):
    SOFTMAX = "softmax"
    LINEAR = "linear"
    COS = "cos"
    COS_SQUARE = "cossquare"


@dataclass(frozen=True)
class AttentionConfig:
    """``horizon_M=None`` means "use the longer of the two sequence lengths"."""

    variant: Variant = Variant.COS_SQUARE
    horizon_M: Optional[int] = None
    causal: bool = False
    epsilon: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.horizon_M is not None and int(self.horizon_M) < 1:
            raise ValueError(f"horizon_M must be positive, got {self.horizon_M}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    def horizon(self, n_queries: int, n_keys: int) -> int:
        m = max(n_queries, n_keys) if self.horizon_M is None else int(self.horizon_M)
        if m < n_queries or m < n_keys:
            raise ValueError(
                f"horizon_M={m} is shorter than the sequences (N={n_queries}, keys={n_keys})"
            )
        return m


@dataclass
class AttentionOutput:
    output: Tensor
    weights: Optional[Tensor] = None


class DomainError(ValueError):
    pass


def feature_map(x: Tensor) -> Tensor:
    return nk.relu(x)


def cos_square_gap_weight(gap: int, M: int) -> float:
    """``cos^2(pi * gap / 2M)`` for ``|gap| <= M``."""
    if M < 1 or abs(gap) > M:
        raise DomainError(f"gap {gap} outside [-{M}, {M}]")
    c = math.cos(math.pi * gap / (2 * M))
    return c * c


def cos_square_weight(i: int, j: int, M: int) -> float:
    """Cos-square re-weighting between 1-based positions ``i`` and ``j``."""
    if i < 1 or j < 1 or M < max(i, j):
        raise DomainError(f"need 1 <= i, j <= M, got i={i}, j={j}, M={M}")
    return cos_square_gap_weight(i - j, M)


def cos_weight(i: int, j: int, M: int) -> float:
    if i < 1 or j < 1 or M < max(i, j):
        raise DomainError(f"need 1 <= i, j <= M, got i={i}, j={j}, M={M}")
    return math.cos(math.pi * (i - j) / (2 * M))


@lru_cache(maxsize=64)
def _weights_cached(variant: Variant, n: int, m: int, horizon: int, causal: bool) -> np.ndarray:
    gap = np.arange(1, n + 1)[:, None] - np.arange(1, m + 1)[None, :]
    if variant is Variant.LINEAR:
        w = np.ones((n, m))
    elif variant is Variant.COS:
        w = np.cos(np.pi * gap / (2 * horizon))
    elif variant is Variant.COS_SQUARE:
        w = np.cos(np.pi * gap / (2 * horizon)) ** 2
    else:
        raise ValueError(f"no position weights for {variant}")
    if causal:
        w = np.where(gap >= 0, w, 0.0)
    w = np.ascontiguousarray(w)
    w.flags.writeable = False
    return w


def position_weights(variant, n: int, m: int, horizon: int, causal: bool) -> np.ndarray:
    """``n x m`` multiplicative position factors (zero above the diagonal if causal)."""
    return _weights_cached(Variant(variant), n, m, horizon, causal)


@lru_cache(maxsize=64)
def _angles(n: int, horizon: int):
    theta = np.pi * np.arange(1, n + 1) / horizon
    c, s = np.cos(theta), np.sin(theta)
    c.flags.writeable = False
    s.flags.writeable = False
    return c, s


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> tuple:
    if q.ndim not in (2, 3) or k.ndim != q.ndim or v.ndim != q.ndim:
        raise ShapeError(f"q, k, v must all be 2-D or 3-D, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"keys and values disagree in length: {k.shape} vs {v.shape}")
    if q.ndim == 3 and not (q.shape[0] == k.shape[0] == v.shape[0]):
        raise ShapeError(f"group counts differ: {q.shape[0]}, {k.shape[0]}, {v.shape[0]}")
    return q.shape[-2], k.shape[-2]


def _as3(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a[None] if a.ndim == 2 else a)


def _from3(a: np.ndarray, like: tuple) -> np.ndarray:
    return a[0] if len(like) == 2 else a


def _direct_op(qf: Tensor, kf: Tensor, v: Tensor, w: np.ndarray, eps: float):
    kern = kernels.backend()
    q3, k3, v3 = _as3(qf.data), _as3(kf.data), _as3(v.data)
    out, attn, den = kern.direct_forward(q3, k3, v3, w, eps)

    def back(g):
        gq, gk, gv = kern.direct_backward(
            _as3(g), q3, k3, v3, w, out, attn, den
        )
        return _from3(gq, qf.shape), _from3(gk, kf.shape), _from3(gv, v.shape)

    # reported weights are normalized without epsilon so live rows sum to 1;
    # a row with no positive score stays all-zero
    total = attn.sum(axis=-1, keepdims=True)
    weights = np.divide(attn, total, out=np.zeros_like(attn), where=total > 0.0)
    return nk.record(_from3(out, qf.shape), (qf, kf, v), back), _from3(weights, qf.shape)


def _linear_op(qf: Tensor, kf: Tensor, v: Tensor, horizon: int, causal: bool, eps: float):
    kern = kernels.backend()
    q3, k3, v3 = _as3(qf.data), _as3(kf.data), _as3(v.data)
    cq, sq = _angles(q3.shape[1], horizon)
    ck, sk = _angles(k3.shape[1], horizon)
    out, den = kern.linear_forward(q3, k3, v3, cq, sq, ck, sk, causal, eps)

    def back(g):
        gq, gk, gv = kern.linear_backward(_as3(g), q3, k3, v3, cq, sq, ck, sk, causal, out, den)
        return _from3(gq, qf.shape), _from3(gk, kf.shape), _from3(gv, v.shape)

    return nk.record(_from3(out, qf.shape), (qf, kf, v), back)


def _softmax_op(q: Tensor, k: Tensor, v: Tensor, causal: bool):
    q3, k3, v3 = _as3(q.data), _as3(k.data), _as3(v.data)
    n, m = q3.shape[1], k3.shape[1]
    z = q3 @ np.swapaxes(k3, 1, 2)
    if causal:
        allowed = np.arange(m)[None, :] <= np.arange(n)[:, None]
        z = np.where(allowed[None], z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ v3

    def back(g):
        g3 = _as3(g)
        gp = g3 @ np.swapaxes(v3, 1, 2)
        gz = p * (gp - (gp * p).sum(axis=-1, keepdims=True))
        return (
            _from3(gz @ k3, q.shape),
            _from3(np.swapaxes(gz, 1, 2) @ q3, k.shape),
            _from3(np.swapaxes(p, 1, 2) @ g3, v.shape),
        )

    return nk.record(_from3(out, q.shape), (q, k, v), back), _from3(p, q.shape)


def softmax_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> AttentionOutput:
    """Dot-product attention with row softmax (no temperature scaling)."""
    _check_qkv(q, k, v)
    out, p = _softmax_op(q, k, v, causal)
    return AttentionOutput(out, Tensor.wrap(p))


def reweighted_attention_direct(
    q: Tensor, k: Tensor, v: Tensor, config: AttentionConfig
) -> AttentionOutput:
    """Quadratic-time evaluation with the full weight matrix.

    A query whose ReLU features are all zero gets a zero output row (the
    ``epsilon`` in the normalizer keeps it finite).
    """
    n, m = _check_qkv(q, k, v)
    if config.variant is Variant.SOFTMAX:
        return softmax_attention(q, k, v, config.causal)
    horizon = config.horizon(n, m)
    w = position_weights(config.variant, n, m, horizon, config.causal)
    out, attn = _direct_op(feature_map(q), feature_map(k), v, w, config.epsilon)
    return AttentionOutput(out, Tensor.wrap(attn))


def cos_square_attention_linear(
    q: Tensor, k: Tensor, v: Tensor, config: AttentionConfig
) -> AttentionOutput:
    """Streaming cos-square attention; no weight matrix is formed.

    Non-causal mode sums all keys into the three ``d1 x d2`` accumulators
    first; causal mode updates them key by key as queries advance. The
    factor 1/2 of the decomposition is folded into the stabilizer
    (``2 * epsilon``) so the result equals the direct form exactly in
    exact arithmetic.
    """
    n, m = _check_qkv(q, k, v)
    if config.variant is not Variant.COS_SQUARE:
        raise ContractError(f"streaming form exists only for cos-square, not {config.variant.value}")
    horizon = config.horizon(n, m)
    out = _linear_op(
        feature_map(q), feature_map(k), v, horizon, config.causal, 2.0 * config.epsilon
    )
    return AttentionOutput(out, None)


def attend(q: Tensor, k: Tensor, v: Tensor, config: AttentionConfig, form: str = "direct"):
    """Dispatch on variant and form (``"direct"`` or ``"linear"``).

    The linear form applies only to cos-square; other variants always run
    direct.
    """
    if form not in ("direct", "linear"):
        raise ValueError(f"unknown attention form {form!r}")
    if form == "linear" and config.variant is Variant.COS_SQUARE:
        return cos_square_attention_linear(q, k, v, config)
    return reweighted_attention_direct(q, k, v, config)


def mean_head_attention_map(maps: Sequence) -> Tensor:
    """Elementwise mean of per-head attention matrices."""
    maps = list(maps)
    if not maps:
        raise ContractError("mean_head_attention_map needs at least one map")
    arrays = [m.data if isinstance(m, Tensor) else np.asarray(m, dtype=np.float64) for m in maps]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeError(f"attention maps differ in shape: {shape} vs {a.shape}")
    return Tensor(np.mean(np.stack(arrays), axis=0))
