"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--samples 1000] [--repeat 20]

Prints one row per kernel with the median wall time of each backend and the
speed-up, plus a full forward+backward pass of a dense [4, 5, 5, 3] layer stack.
"""

import argparse
import time

import numpy as np

from kanevo import kernels


def _median_time(fn, args, repeat):
    fn(*args)  # warm-up (triggers JIT compilation for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--grid", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    N, n_in, n_out, G = args.samples, 5, 5, args.grid
    X = rng.uniform(-2, 2, (N, n_in))
    lo, hi = np.full(n_in, -2.0), np.full(n_in, 2.0)
    dst, src = (a.astype(np.int64) for a in np.nonzero(np.ones((n_out, n_in))))
    E = src.size
    coeffs = rng.normal(size=(E, G + 3))
    wb, ws = rng.normal(size=E), rng.normal(size=E)
    span, V, dV = kernels._layer_basis_local_np(X, lo, hi, G)
    phi, spl, base = kernels._phi_forward_np(X, span, V, src, coeffs, wb, ws)
    gphi = rng.normal(size=phi.shape)

    cases = {
        "layer_basis_local": (X, lo, hi, G),
        "phi_forward": (X, span, V, src, coeffs, wb, ws),
        "phi_backward": (gphi, X, span, V, dV, src, coeffs, wb, ws, spl, base, n_in),
        "scatter": (phi, dst, n_out),
    }
    print(f"samples={N} grid={G} edges={E} repeat={args.repeat}")
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}")
    for name, a in cases.items():
        t_np = _median_time(kernels.NUMPY_KERNELS[name], a, args.repeat)
        t_nb = _median_time(kernels.NUMBA_KERNELS[name], a, args.repeat)
        print(f"{name:<20}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.1f}")

    def pass_with(k):
        def run():
            s, v, dv = k["layer_basis_local"](X, lo, hi, G)
            p, sp, bs = k["phi_forward"](X, s, v, src, coeffs, wb, ws)
            k["scatter"](p, dst, n_out)
            k["phi_backward"](gphi, X, s, v, dv, src, coeffs, wb, ws, sp, bs, n_in)

        return run

    t_np = _median_time(pass_with(kernels.NUMPY_KERNELS), (), args.repeat)
    t_nb = _median_time(pass_with(kernels.NUMBA_KERNELS), (), args.repeat)
    print(f"{'layer fwd+bwd':<20}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
