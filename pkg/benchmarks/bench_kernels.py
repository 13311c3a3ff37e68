"""Time the compiled kernels against their numpy counterparts.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from stabprior import _kernels_py

try:
    from stabprior import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(rng, fan_in, units):
    mu = rng.standard_normal((fan_in, units)) / np.sqrt(fan_in)
    sigma = np.abs(rng.standard_normal((fan_in, units))) / np.sqrt(fan_in) + 1e-3
    rho = rng.standard_normal((fan_in, units))
    sp = np.abs(rng.standard_normal(units)) + 0.1
    sp_full = np.broadcast_to(sp, mu.shape)
    return {
        "softplus_floor": lambda m: m.softplus_floor(rho),
        "stabilising_sigma": lambda m: m.stabilising_sigma(mu, sigma, fan_in),
        "gaussian_product": lambda m: m.gaussian_product(mu, sigma, mu, sp_full),
        "kl_diag": lambda m: m.kl_diag(mu, sigma, mu * 0.5, sp_full),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.Generator(np.random.Philox(0))
    if _compiled is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'kernel':<20}{'shape':>12}{'numpy ms':>12}{'cython ms':>12}{'speed-up':>10}")
    for shape in ((64, 128), (128, 128), (512, 512)):
        for name, fn in cases(rng, *shape).items():
            n = max(1, 200_000 // (shape[0] * shape[1]))
            py = min(timeit.repeat(lambda: fn(_kernels_py), number=n, repeat=args.repeat)) / n * 1e3
            if _compiled is None:
                print(f"{name:<20}{str(shape):>12}{py:12.4f}")
                continue
            cy = min(timeit.repeat(lambda: fn(_compiled), number=n, repeat=args.repeat)) / n * 1e3
            print(f"{name:<20}{str(shape):>12}{py:12.4f}{cy:12.4f}{py / cy:10.2f}")


if __name__ == "__main__":
    main()
