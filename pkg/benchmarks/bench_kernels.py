"""Time each kernel's numba and numpy variants on study-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import time

import numpy as np

from discus import kernels
from discus._accel import HAVE_NUMBA
from discus.metrics import gaussian_window
from discus.wavelet import FILTERS


def cases(rng):
    img = rng.random((64, 64))
    cplx = rng.standard_normal((32, 64, 64)) + 1j * rng.standard_normal((32, 64, 64))
    codes = rng.standard_normal((32, 4096))
    lo, hi = FILTERS["db4"]
    rows = cplx.reshape(-1, 64)
    half = rows[:, :32]
    return {
        "bilinear_warp 64x64": lambda f: f(img, 2.3, 1.7, 0.0),
        "soft_threshold 32x64x64": lambda f: f(cplx, 0.5),
        "group_soft_threshold 32x4096": lambda f: f(codes, 1.0),
        "dwt_rows 2048x64": lambda f: f(rows, lo, hi),
        "idwt_rows 2048x32": lambda f: f(half, half, lo, hi),
        "filter_valid 64x64 / 7x7": lambda f: f(img, gaussian_window()),
    }


def best_of(fn, repeat):
    fn()  # warm-up (numba compiles here)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba disabled or missing (DISCUS_NUMBA=0?); timing the numpy variants only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':30s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, call in cases(rng).items():
        base = name.split()[0]
        t_np = best_of(lambda: call(getattr(kernels, base + "_numpy")), args.repeat)
        if HAVE_NUMBA:
            t_nb = best_of(lambda: call(getattr(kernels, base + "_numba")), args.repeat)
            print(f"{name:30s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.1f}")
        else:
            print(f"{name:30s} {t_np * 1e3:10.3f} {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
