# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the inference engine.

Every reduction runs left to right in double precision, in the same order as
the numpy fallback in ``_kernels_py``, so both backends agree bit for bit.
The extension must be built without FMA contraction (-ffp-contract=off).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


def dense_batch(real[:, ::1] x, real[:, ::1] w, real[::1] b):
    cdef Py_ssize_t nb = x.shape[0], n_in = x.shape[1], n_out = w.shape[0]
    cdef Py_ssize_t s, i, j
    cdef double acc
    dtype = np.float32 if real is float else np.float64
    out = np.empty((nb, n_out), dtype=dtype)
    cdef real[:, ::1] o = out
    with nogil:
        for s in range(nb):
            for i in range(n_out):
                acc = 0.0
                for j in range(n_in):
                    acc = acc + <double>w[i, j] * <double>x[s, j]
                o[s, i] = <real>(acc + <double>b[i])
    return out


def conv2d_batch(real[:, :, :, ::1] x, real[:, :, :, ::1] kern, real[::1] b,
                 int stride, int pad):
    cdef Py_ssize_t nb = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t c_out = kern.shape[0], k = kern.shape[2]
    cdef Py_ssize_t h_out = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t w_out = (wd + 2 * pad - k) // stride + 1
    cdef Py_ssize_t s, co, ci, ky, kx, oy, ox, iy, ix
    cdef double acc
    dtype = np.float32 if real is float else np.float64
    out = np.empty((nb, c_out, h_out, w_out), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    with nogil:
        for s in range(nb):
            for co in range(c_out):
                for oy in range(h_out):
                    for ox in range(w_out):
                        acc = 0.0
                        for ci in range(c_in):
                            for ky in range(k):
                                iy = oy * stride + ky - pad
                                for kx in range(k):
                                    ix = ox * stride + kx - pad
                                    if iy < 0 or iy >= h or ix < 0 or ix >= wd:
                                        # zero padding still takes part in the sum
                                        acc = acc + <double>kern[co, ci, ky, kx] * 0.0
                                    else:
                                        acc = acc + <double>kern[co, ci, ky, kx] * <double>x[s, ci, iy, ix]
                        o[s, co, oy, ox] = <real>(acc + <double>b[co])
    return out


def l2_normalize_rows(real[:, ::1] x, double norm_floor):
    """Return (normalized rows, float64 norms). Rows at or below the floor are left as-is."""
    cdef Py_ssize_t nb = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t s, j
    cdef double acc, nrm
    dtype = np.float32 if real is float else np.float64
    out = np.empty((nb, d), dtype=dtype)
    norms = np.empty(nb, dtype=np.float64)
    cdef real[:, ::1] o = out
    cdef double[::1] nv = norms
    with nogil:
        for s in range(nb):
            acc = 0.0
            for j in range(d):
                acc = acc + <double>x[s, j] * <double>x[s, j]
            nrm = sqrt(acc)
            nv[s] = nrm
            for j in range(d):
                if nrm > norm_floor:
                    o[s, j] = <real>(<double>x[s, j] / nrm)
                else:
                    o[s, j] = x[s, j]
    return out, norms
