"""Pure-numpy fallback for the compiled kernels.

Loops run over the reduction axis so the double-precision accumulation order
matches ``_kernels.pyx`` exactly; vectorization happens across the other axes.
"""

import numpy as np


def dense_batch(x, w, b):
    acc = np.zeros((x.shape[0], w.shape[0]), dtype=np.float64)
    x64 = x.astype(np.float64)
    w64 = w.astype(np.float64)
    for j in range(x.shape[1]):
        acc += w64[:, j][None, :] * x64[:, j][:, None]
    return (acc + b.astype(np.float64)[None, :]).astype(x.dtype)


def conv2d_batch(x, kern, b, stride, pad):
    nb, c_in, h, wd = x.shape
    c_out, _, k, _ = kern.shape
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (wd + 2 * pad - k) // stride + 1
    xp = np.zeros((nb, c_in, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    k64 = kern.astype(np.float64)
    acc = np.zeros((nb, c_out, h_out, w_out), dtype=np.float64)
    ys = stride * (h_out - 1) + 1
    xs = stride * (w_out - 1) + 1
    for ci in range(c_in):
        for ky in range(k):
            for kx in range(k):
                patch = xp[:, ci, ky:ky + ys:stride, kx:kx + xs:stride]
                acc += k64[:, ci, ky, kx][None, :, None, None] * patch[:, None, :, :]
    return (acc + b.astype(np.float64)[None, :, None, None]).astype(x.dtype)


def l2_normalize_rows(x, norm_floor):
    x64 = x.astype(np.float64)
    acc = np.zeros(x.shape[0], dtype=np.float64)
    for j in range(x.shape[1]):
        acc += x64[:, j] * x64[:, j]
    norms = np.sqrt(acc)
    ok = norms > norm_floor
    out = x.copy()
    out[ok] = (x64[ok] / norms[ok][:, None]).astype(x.dtype)
    return out, norms
