"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is also checked for agreement between the two backends before
it is timed.
"""
import argparse
import timeit

import numpy as np

from raincap import kernels


def cases(rng):
    xp = rng.standard_normal((8, 32, 66, 66)).astype(np.float32)
    cols = kernels.im2col(xp, 3, 3, 1, kernels._pykernels)
    img = rng.random((256, 256))
    streak = rng.random((128, 128)).astype(np.float32)
    streak[streak < 0.98] = 0
    kern = rng.random((31, 31)).astype(np.float32)
    a, b = rng.integers(0, 20, 60), rng.integers(0, 20, 60)
    return {
        "im2col 8x32x64x64 k3": lambda impl: kernels.im2col(xp, 3, 3, 1, impl),
        "col2im 8x32x64x64 k3": lambda impl: kernels.col2im(cols, xp.shape, 3, 3, 1, impl),
        "box_mean 256x256 r8": lambda impl: kernels.box_mean(img, 8, impl),
        "correlate_sparse 128x128 k31": lambda impl: kernels.correlate_sparse(streak, kern, impl),
        "lcs_length 60x60": lambda impl: kernels.lcs_length(a, b, impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled extension not built; only the python backend is available")
    print(f"{'kernel':<30}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        outs = {k: fn(impl) for k, impl in impls.items()}
        ref = outs["python"]
        for k, v in outs.items():
            if not np.allclose(v, ref, rtol=1e-5, atol=1e-6):
                raise SystemExit(f"{name}: {k} backend disagrees with python")
        best = {}
        for k, impl in impls.items():
            t = timeit.Timer(lambda: fn(impl))
            n, _ = t.autorange()
            best[k] = min(t.repeat(args.repeat, n)) / n
        speed = f"{best['python'] / best['cython']:>9.1f}x" if "cython" in best else ""
        print(f"{name:<30}" + "".join(f"{1e3 * best[k]:>10.3f}ms" for k in impls) + speed)


if __name__ == "__main__":
    main()
