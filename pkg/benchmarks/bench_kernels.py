"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on inputs shaped like the backtest workload (101 ages, up
to 42 years, AR orders up to 4); a final row times one decomposition plus
forecast of a single series with each backend swapped in.
"""
import argparse
import timeit

import numpy as np

from groupfts import _backend, forecast, lrcov, curves
from groupfts._backend import python_kernels


def cases(rng):
    x = rng.standard_normal((42, 101))
    xc = x - x.mean(axis=0)
    w = np.maximum(0.0, 1.0 - np.arange(42) / 6.0)
    y = rng.standard_normal(101).cumsum()
    z = rng.standard_normal(40)
    p = 101
    d0 = 1.0 + 6.0 * np.ones(p)
    d1 = -4.0 * np.ones(p - 1)
    d2 = np.ones(p - 2)
    return {
        "pava (p=101)": lambda k: k.pava(y, np.ones(p)),
        "lag crossprod (42x101, h=6)": lambda k: k.lag_weighted_crossprod(xc, w),
        "pentadiagonal solve (p=101)": lambda k: k.solve_pentadiagonal(d0, d1, d2, y),
        "AR(4) fit (n=40)": lambda k: k.ar_fit(z, 4, 4),
    }


def pipeline(rng):
    from groupfts.curves import AgeGrid, FunctionalTimeSeries

    f = FunctionalTimeSeries(AgeGrid(np.arange(101.0)), np.arange(42), rng.standard_normal((42, 101)).cumsum(axis=0))
    return lambda: forecast.forecast_curves(f, "dynamic", horizon=30)


def swap(k):
    for mod in (forecast, lrcov, curves):
        mod.kernels = k


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    compiled = _backend.compiled_kernels
    if compiled is None:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    backends = [("python", python_kernels)] + ([("cython", compiled)] if compiled is not None else [])
    print(f"{'kernel':32s} " + " ".join(f"{name:>12s}" for name, _ in backends) + "  speed-up")
    rows = list(cases(rng).items())
    run = pipeline(rng)
    for label, fn in rows + [("decompose + forecast (1 series)", None)]:
        times = []
        for _, k in backends:
            if fn is None:
                swap(k)
                t = min(timeit.repeat(run, number=1, repeat=max(3, args.repeat // 20)))
            else:
                t = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
            times.append(t)
        swap(_backend.kernels)
        ratio = f"{times[0] / times[1]:8.1f}x" if len(times) == 2 else ""
        print(f"{label:32s} " + " ".join(f"{t * 1e6:10.1f}us" for t in times) + f"  {ratio}")


if __name__ == "__main__":
    main()
