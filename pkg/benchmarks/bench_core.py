"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_core.py [--repeat 5]

Prints one line per kernel with the best-of-N time for each backend and the
speedup.  Exits non-zero if the compiled extension is not built.
"""

import argparse
import sys
import timeit

import numpy as np

from hipmdp import _pure

try:
    from hipmdp import _ext
except ImportError:
    _ext = None


def cases(rng):
    X1 = rng.standard_normal((200, 4))
    X2 = rng.standard_normal((200, 4))
    inv_ls2 = rng.uniform(0.5, 2.0, 4)
    support = rng.standard_normal((200, 4))
    inv_ls2_out = rng.uniform(0.5, 2.0, (4, 4))
    sf2_out = rng.uniform(0.5, 2.0, 4)
    coef = rng.standard_normal((4, 200))
    x = rng.standard_normal(4)
    coeffs = np.array(np.meshgrid(*[np.arange(6)] * 4, indexing="ij")).reshape(4, -1).T
    coeffs = np.ascontiguousarray(coeffs, dtype=np.int64)
    s_unit = rng.uniform(0, 1, 4)
    return {
        "se_kernel_matrix 200x200": lambda m: m.se_kernel_matrix(X1, X2, inv_ls2, 1.3),
        "se_kernel_vector 200": lambda m: m.se_kernel_vector(x, X1, inv_ls2, 1.3),
        "interp_outputs 4x200": lambda m: m.interp_outputs(x, support, inv_ls2_out, sf2_out,
                                                           coef),
        "cartpole_step": lambda m: m.cartpole_step(0.1, 0.2, 0.05, -0.1, 10.0, 0.2, 0.5, 0.02,
                                                   9.8, 1.0),
        "acrobot_step (4 substeps)": lambda m: m.acrobot_step(0.3, 0.1, -0.2, 0.5, 1.0, 1.0,
                                                              1.0, 1.0, 0.5, 0.5, 1.0, 1.0,
                                                              9.8, 0.05, 4, 12.57, 28.27, True),
        "fourier_features order 5, d=4": lambda m: m.fourier_features(s_unit, coeffs),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=2000)
    args = ap.parse_args(argv)
    if _ext is None:
        print("compiled extension not built; run `pip install -e .` first", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'python (us)':>12s} {'cython (us)':>12s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        n = args.number
        times = {}
        for label, mod in (("python", _pure), ("cython", _ext)):
            t = min(timeit.repeat(lambda: fn(mod), number=n, repeat=args.repeat))
            times[label] = 1e6 * t / n
        print(f"{name:34s} {times['python']:12.2f} {times['cython']:12.2f} "
              f"{times['python'] / times['cython']:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
