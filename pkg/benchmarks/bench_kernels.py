"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel with the best wall time of each backend and the
speedup.  Exits with a note if the extension has not been built.
"""
import argparse
import timeit

import numpy as np

from herdtwin import kernels


def workloads(rng):
    minutes = np.sort(rng.choice(52 * 24 * 60, 60_000, replace=False)).astype(np.int64)
    states = rng.integers(-1, 8, minutes.size).astype(np.int8)
    corrupted = (rng.random(minutes.size) < 0.001).astype(np.uint8)
    series = rng.normal(30, 5, 52 * 24)
    taps = np.hamming(9) / np.hamming(9).sum()
    params = rng.uniform(1, 20, 24)
    x = np.linspace(0, 23, 500)

    T, B, D, H = 24, 24, 128, 128
    X = rng.normal(size=(T, B, D))
    W = rng.normal(0, 0.1, (D, 4 * H))
    U = rng.normal(0, 0.1, (H, 4 * H))
    b = np.zeros(4 * H)
    dH = rng.normal(size=(T, B, H))

    def backward(mod):
        Hs, Cs, G, TC = mod.lstm_forward(X, W, U, b)
        return lambda: mod.lstm_backward(X, W, U, Hs, Cs, G, TC, dH)

    return {
        "hourly_counts": lambda mod: lambda: mod.hourly_counts(minutes, states, corrupted),
        "fir_apply": lambda mod: lambda: mod.fir_apply(series, taps),
        "gauss_eval_jac": lambda mod: lambda: mod.gauss_eval_jac(params, x, True),
        "lstm_forward": lambda mod: lambda: mod.lstm_forward(X, W, U, b),
        "lstm_backward": backward,
    }


def best_time(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.compiled is None:
        print("compiled kernels not built; run `python3 setup.py build_ext --inplace` first")
        return 1
    print(f"{'kernel':<16}{'cython (ms)':>14}{'python (ms)':>14}{'speedup':>10}")
    for name, make in workloads(np.random.default_rng(0)).items():
        fast = best_time(make(kernels.compiled), args.repeat)
        slow = best_time(make(kernels.python), args.repeat)
        print(f"{name:<16}{fast * 1e3:>14.3f}{slow * 1e3:>14.3f}{slow / fast:>9.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
