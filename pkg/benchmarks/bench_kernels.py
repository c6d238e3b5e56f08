"""Compare the compiled and pure-Python run loops.

    python benchmarks/bench_kernels.py [--samples N] [--repeat R]
"""

import argparse
import math
import time

import numpy as np

from gridlock import _backend
from gridlock.fll import Estimator, NOMINAL_OMEGA
from gridlock.signals import frequency_step_scenario, synthesize_scenario


def bench(mod, code, u, repeat):
    out = np.zeros((len(u), 14))
    re, im = np.ascontiguousarray(u.real), np.ascontiguousarray(u.imag)
    k = 120 * math.pi
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        mod.run(code, re, im, k, k, 1.0, 1e-4, (0.0, 0.0, NOMINAL_OMEGA, 0.0, 0.0), True, out)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=50_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    sc = frequency_step_scenario(5.0, duration=args.samples / 10_000.0)
    u = synthesize_scenario(sc).u_ab
    backends = _backend.available()
    print(f"{len(u)} samples, best of {args.repeat}; backends: {', '.join(backends)}")
    print(f"{'estimator':<14}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}{'identical':>11}")
    for est in Estimator:
        times, outs = [], []
        for b in backends:
            dt, out = bench(_backend.get(b), est.code, u, args.repeat)
            times.append(dt)
            outs.append(out)
        row = f"{est.value:<14}" + "".join(f"{dt * 1e3:>11.2f} ms" for dt in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:>9.0f}x{str(np.array_equal(*outs)):>11}"
        print(row)


if __name__ == "__main__":
    main()
