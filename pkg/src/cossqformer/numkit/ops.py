"""Differentiable primitives.

Broadcasting is limited to a row vector over a matrix (``add_row``) and to
python scalars (``scale``, ``add_scalar``); everything else requires equal
shapes.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import ContractError, ShapeError, Tensor, record


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise ZeroDivisionError("div: zero in denominator")
    out = ad / bd
    return record(out, (a, b), lambda g: (g / bd, -g * out / bd))


def neg(x: Tensor) -> Tensor:
    return record(-x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(x.data * c, (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return record(x.data + float(c), (x,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {x.shape}")
    return record(x.data.T.copy(), (x,), lambda g: (g.T,))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record(np.transpose(x.data, axes).copy(), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return record(x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(src),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return record(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    shape = x.shape
    n = x.size
    if n == 0:
        raise ContractError("mean of an empty tensor")
    return record(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def sum_rows(x: Tensor) -> Tensor:
    """Row-wise sum of a matrix, returned as an ``m x 1`` column."""
    if x.ndim != 2:
        raise ShapeError(f"sum_rows: expected a matrix, got shape {x.shape}")
    n = x.shape[1]
    return record(x.data.sum(axis=1, keepdims=True), (x,), lambda g: (np.repeat(g, n, axis=1),))


def mean_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"mean_rows: expected a matrix, got shape {x.shape}")
    n = x.shape[1]
    return record(
        x.data.mean(axis=1, keepdims=True), (x,), lambda g: (np.repeat(g, n, axis=1) / n,)
    )


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError instead
        out = np.exp(x.data)
    return record(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0.0):
        raise ContractError("log: non-positive input")
    return record(np.log(xd), (x,), lambda g: (g / xd,))


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(x, 0)``; the subgradient at exactly 0 is 0."""
    mask = x.data > 0.0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """Add a length-n row vector to every row of an ``m x n`` matrix."""
    if x.ndim != 2:
        raise ShapeError(f"add_row: expected a matrix, got shape {x.shape}")
    n = x.shape[1]
    if row.size != n or row.ndim > 2 or (row.ndim == 2 and row.shape[0] != 1):
        raise ShapeError(f"add_row: row of shape {row.shape} does not fit {x.shape}")
    rshape = row.shape
    return record(
        x.data + row.data.reshape(1, n), (x, row), lambda g: (g, g.sum(axis=0).reshape(rshape))
    )


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along the feature (last) axis by default."""
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError("concat of nothing")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return record(out, tensors, lambda g: tuple(np.split(g, sizes, axis=ax)))


def take(x: Tensor, index) -> Tensor:
    """Slicing / fancy indexing with scatter-add backward."""
    shape = x.shape
    out = np.array(x.data[index], dtype=np.float64)

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return record(out, (x,), back)


def softmax_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row softmax with max subtraction.

    ``mask`` (boolean, same shape) marks allowed entries; disallowed ones get
    probability 0. Every row must keep at least one allowed entry.
    """
    xd = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != xd.shape:
            raise ShapeError(f"softmax_rows: mask {mask.shape} vs input {xd.shape}")
        if not mask.any(axis=-1).all():
            raise ContractError("softmax_rows: a row is fully masked")
        z = np.where(mask, xd, -np.inf)
    else:
        z = xd
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record(p, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then ``* gain + bias``."""
    if x.ndim != 2:
        raise ShapeError(f"layer_norm: expected a matrix, got shape {x.shape}")
    n = x.shape[1]
    if gain.size != n or bias.size != n:
        raise ShapeError(f"layer_norm: gain/bias must have {n} entries")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data.reshape(1, n)
    gshape, bshape = gain.shape, bias.shape

    def back(g):
        gx_hat = g * gd
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=0).reshape(gshape), g.sum(axis=0).reshape(bshape)

    return record(xhat * gd + bias.data.reshape(1, n), (x, gain, bias), back)
