import os
import subprocess
import sys

import numpy as np
import pytest

from prefiqs import kernels

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_dense_backends_bit_identical(rng, dtype):
    for _ in range(20):
        b, n, m = (int(v) for v in rng.integers(1, 40, 3))
        x = rng.standard_normal((b, n)).astype(dtype)
        w = rng.standard_normal((m, n)).astype(dtype)
        bias = rng.standard_normal(m).astype(dtype)
        a = kernels.dense_batch(x, w, bias, backend="cython")
        p = kernels.dense_batch(x, w, bias, backend="python")
        assert a.dtype == p.dtype == dtype
        assert a.tobytes() == p.tobytes()


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_conv_backends_bit_identical(rng, dtype):
    for _ in range(10):
        c, co, h, k = (int(v) for v in rng.integers(1, 5, 4))
        h += k
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        if (h + 2 * pad - k) % stride:
            stride = 1
        x = rng.standard_normal((3, c, h, h)).astype(dtype)
        kern = rng.standard_normal((co, c, k, k)).astype(dtype)
        bias = rng.standard_normal(co).astype(dtype)
        a = kernels.conv2d_batch(x, kern, bias, stride, pad, backend="cython")
        p = kernels.conv2d_batch(x, kern, bias, stride, pad, backend="python")
        assert a.tobytes() == p.tobytes()


@needs_ext
def test_normalize_backends_bit_identical(rng):
    x = rng.standard_normal((50, 17)).astype(np.float32)
    x[3] = 0.0
    a, na = kernels.l2_normalize_rows(x, 1e-12, backend="cython")
    p, npy = kernels.l2_normalize_rows(x, 1e-12, backend="python")
    assert a.tobytes() == p.tobytes() and na.tobytes() == npy.tobytes()
    assert na[3] == 0.0


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_forced_python_backend_gives_same_embeddings(tmp_path):
    code = (
        "import numpy as np, sys\n"
        "from prefiqs import kernels, synthlab\n"
        "from prefiqs.model import forward_batch\n"
        "cfg = synthlab.SynthConfig(n_identities=3, samples_per_identity=4, input_dim=6, embedding_dim=3)\n"
        "d = synthlab.generate_dataset(cfg)\n"
        "m = synthlab.train_toy_model(d, (6, 8, 3), 3, 0.1, 0)\n"
        "sys.stdout.write(kernels.BACKEND + ' ' + forward_batch(m, d.X).tobytes().hex())\n"
    )
    outs = {}
    for forced in ("", "python"):
        env = dict(os.environ, PREFIQS_BACKEND=forced)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, digest = res.stdout.split()
        outs[backend] = digest
    assert "python" in outs
    assert len(set(outs.values())) == 1
