"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

Two complete backends expose the same functions: the compiled extension
(``_ckernels``, Cython) and the NumPy/Python fallback (``_pykernels``).
When the extension imports, the default is ``auto``, which takes each kernel
from whichever backend measured faster. Attention comes from NumPy, whose
matmuls go through BLAS and beat the hand-written loops. Soft-DTW comes from
the extension, where the scalar recursion runs about 40x faster compiled.
``COSSQ_KERNELS=python|cython|auto`` overrides the default at import and
``use_backend`` switches at runtime (tests and benchmarks).
"""

import os
import types

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

__all__ = [
    "available_backends",
    "backend",
    "backend_name",
    "use_backend",
]

_ATTENTION = ("direct_forward", "direct_backward", "linear_forward", "linear_backward")
_SOFTDTW = ("softdtw_forward", "softdtw_backward")

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels
    _BACKENDS["auto"] = types.SimpleNamespace(
        NAME="auto",
        **{f: getattr(_pykernels, f) for f in _ATTENTION},
        **{f: getattr(_ckernels, f) for f in _SOFTDTW},
    )

_active = _BACKENDS.get("auto", _pykernels)
_requested = os.environ.get("COSSQ_KERNELS", "").lower()
if _requested in _BACKENDS:
    _active = _BACKENDS[_requested]


def available_backends():
    return sorted(_BACKENDS)


def backend():
    return _active


def backend_name():
    return _active.NAME


def use_backend(name):
    """Select the kernel backend by name; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    previous = _active.NAME
    _active = _BACKENDS[name]
    return previous
