"""Compare the numba and numpy 3x3 convolution kernels.

Usage: python benchmarks/bench_conv.py [--batch 96] [--N 16] [--K 4] [--width 16] [--repeat 20]

Times forward, input-gradient and weight-gradient passes for both backends
on one layer shaped like a desk-scale estimator layer, after checking that
the two backends agree.
"""

import argparse
import timeit
import warnings

import numpy as np

from mimoest import kernels


def main():
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=96)
    ap.add_argument("--N", type=int, default=16)
    ap.add_argument("--K", type=int, default=4)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    gen = np.random.default_rng(0)
    x = gen.standard_normal((args.batch, args.N, args.K, args.width))
    w = gen.standard_normal((3, 3, args.width, args.width))
    b = gen.standard_normal(args.width)
    g = gen.standard_normal(x.shape)

    ops = {
        "forward": ("conv3x3_forward", (x, w, b)),
        "grad_input": ("conv3x3_grad_input", (g, w)),
        "grad_weight": ("conv3x3_grad_weight", (x, g)),
    }
    print(f"layer {args.batch}x{args.N}x{args.K}x{args.width} -> {args.width}, "
          f"best of {args.repeat} runs")
    print(f"{'op':<12s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (fn, call_args) in ops.items():
        f_np = getattr(kernels, fn + "_np")
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=1, repeat=args.repeat))
        if not kernels.HAVE_NUMBA:
            print(f"{name:<12s} {1e3 * t_np:10.3f} {'n/a':>10s}")
            continue
        f_nb = getattr(kernels, fn + "_nb")
        np.testing.assert_allclose(f_nb(*call_args), f_np(*call_args), atol=1e-9)   # also compiles
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<12s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
