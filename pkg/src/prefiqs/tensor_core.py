"""Dense array primitives for the inference engine.

Arrays are plain ``numpy.ndarray`` objects stored as float32 (float64 is
accepted where a caller needs extra precision, e.g. finite differences).
Reductions accumulate in float64, left to right, so that results do not
depend on call order, batch composition or thread count.
"""

import numpy as np

from . import kernels
from .errors import NonIntegralOutputSize, ShapeMismatch, ZeroNorm

NORM_FLOOR = 1e-12
BN_EPS = 1e-5


def make_rng(seed):
    """Seeded generator used everywhere randomness is needed (PCG64)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_array(data, dtype=np.float32):
    arr = np.asarray(data, dtype=dtype)
    if arr.size == 0:
        raise ShapeMismatch("empty array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("array contains non-finite values")
    return arr


def _float_dtype(*arrays):
    return np.float64 if any(np.asarray(a).dtype == np.float64 for a in arrays) else np.float32


def l2_normalize(v):
    v = np.asarray(v)
    if v.ndim != 1 or v.size == 0:
        raise ShapeMismatch(f"l2_normalize expects a non-empty vector, got shape {v.shape}")
    out, norms = kernels.l2_normalize_rows(v.astype(_float_dtype(v))[None, :], NORM_FLOOR)
    if not norms[0] > NORM_FLOOR:
        raise ZeroNorm(f"vector norm {norms[0]:.3g} is below {NORM_FLOOR}")
    return out[0]


def dense_forward(x, W, b):
    x, W, b = np.asarray(x), np.asarray(W), np.asarray(b)
    if x.ndim != 1 or W.ndim != 2 or b.ndim != 1 or W.shape != (b.shape[0], x.shape[0]):
        raise ShapeMismatch(f"dense: x{x.shape}, W{W.shape}, b{b.shape}")
    dt = _float_dtype(x, W, b)
    return kernels.dense_batch(x.astype(dt)[None, :], W, b)[0]


def conv_output_size(size, k, stride, pad):
    span = size + 2 * pad - k
    if stride < 1 or span < 0 or span % stride:
        raise NonIntegralOutputSize(
            f"(size {size} + 2*{pad} - {k}) / {stride} + 1 is not a positive integer")
    return span // stride + 1


def conv2d_forward(x, kernel, b, stride=1, pad=0):
    x, kernel, b = np.asarray(x), np.asarray(kernel), np.asarray(b)
    if (x.ndim != 3 or kernel.ndim != 4 or b.ndim != 1 or kernel.shape[1] != x.shape[0]
            or kernel.shape[0] != b.shape[0] or kernel.shape[2] != kernel.shape[3]):
        raise ShapeMismatch(f"conv2d: x{x.shape}, kernel{kernel.shape}, b{b.shape}")
    k = kernel.shape[2]
    conv_output_size(x.shape[1], k, stride, pad)
    conv_output_size(x.shape[2], k, stride, pad)
    dt = _float_dtype(x, kernel, b)
    return kernels.conv2d_batch(x.astype(dt)[None], kernel, b, stride, pad)[0]


def relu(x):
    x = np.asarray(x)
    return np.maximum(x, x.dtype.type(0))


def batchnorm_apply(x, gamma, beta, mean, var, eps=BN_EPS, channel_axis=0):
    """Inference-mode batch norm; channels along ``channel_axis``."""
    x = np.asarray(x)
    c = x.shape[channel_axis]
    for p in (gamma, beta, mean, var):
        if np.shape(p) != (c,):
            raise ShapeMismatch(f"batchnorm params must have shape ({c},)")
    shape = [1] * x.ndim
    shape[channel_axis] = c

    def bc(p):
        return np.asarray(p, dtype=np.float64).reshape(shape)

    y = bc(gamma) * (x.astype(np.float64) - bc(mean)) / np.sqrt(bc(var) + eps) + bc(beta)
    return y.astype(x.dtype)


def global_avg_pool(x):
    """Average a C x H x W (or batched B x C x H x W) array over its spatial dims."""
    x = np.asarray(x)
    if x.ndim not in (3, 4):
        raise ShapeMismatch(f"global_avg_pool expects rank 3 or 4, got {x.ndim}")
    flat = x.reshape(x.shape[:-2] + (-1,)).astype(np.float64)
    acc = np.zeros(flat.shape[:-1], dtype=np.float64)
    for j in range(flat.shape[-1]):
        acc += flat[..., j]
    return (acc / flat.shape[-1]).astype(x.dtype)


def flatten(x, batched=False):
    x = np.asarray(x)
    if batched:
        return np.ascontiguousarray(x.reshape(x.shape[0], -1))
    return np.ascontiguousarray(x.reshape(-1))
