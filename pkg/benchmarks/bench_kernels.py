"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N wall time per kernel and backend, the speedup, and
whether the two outputs are bit-identical.
"""

import argparse
import timeit

import numpy as np

from prefiqs import kernels


def cases(rng):
    x = rng.standard_normal((2048, 256)).astype(np.float32)
    w = rng.standard_normal((128, 256)).astype(np.float32)
    b = rng.standard_normal(128).astype(np.float32)
    img = rng.standard_normal((64, 3, 32, 32)).astype(np.float32)
    kern = rng.standard_normal((16, 3, 3, 3)).astype(np.float32)
    kb = rng.standard_normal(16).astype(np.float32)
    emb = rng.standard_normal((20000, 64)).astype(np.float32)
    return {
        "dense 2048x256 -> 128": lambda be: kernels.dense_batch(x, w, b, backend=be),
        "conv 64x3x32x32, 16 3x3": lambda be: kernels.conv2d_batch(img, kern, kb, 1, 1, backend=be),
        "normalize 20000x64": lambda be: kernels.l2_normalize_rows(emb, 1e-12, backend=be),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        kernels.get_backend("cython")
    except ImportError:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'kernel':28s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s}  identical")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for be in ("cython", "python"):
            times[be] = min(timeit.repeat(lambda: fn(be), number=1, repeat=args.repeat)) * 1e3
        out_c, out_p = fn("cython"), fn("python")
        out_c = out_c[0] if isinstance(out_c, tuple) else out_c
        out_p = out_p[0] if isinstance(out_p, tuple) else out_p
        same = np.array_equal(out_c, out_p)
        print(f"{name:28s} {times['cython']:10.2f} {times['python']:10.2f} "
              f"{times['python'] / times['cython']:7.2f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
