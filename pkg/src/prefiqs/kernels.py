"""Backend selection for the hot loops.

The compiled Cython extension is used when it imports; otherwise the numpy
fallback is used. Set ``PREFIQS_BACKEND=python`` to force the fallback.
Both backends produce bit-identical results.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("PREFIQS_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython", "python") or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _prep(dtype, *arrays):
    return [np.ascontiguousarray(a, dtype=dtype) for a in arrays]


def dense_batch(x, w, b, backend=None):
    dtype = np.float64 if x.dtype == np.float64 else np.float32
    x, w, b = _prep(dtype, x, w, b)
    return get_backend(backend).dense_batch(x, w, b)


def conv2d_batch(x, kern, b, stride, pad, backend=None):
    dtype = np.float64 if x.dtype == np.float64 else np.float32
    x, kern, b = _prep(dtype, x, kern, b)
    return get_backend(backend).conv2d_batch(x, kern, b, int(stride), int(pad))


def l2_normalize_rows(x, norm_floor, backend=None):
    dtype = np.float64 if x.dtype == np.float64 else np.float32
    (x,) = _prep(dtype, x)
    return get_backend(backend).l2_normalize_rows(x, float(norm_floor))
