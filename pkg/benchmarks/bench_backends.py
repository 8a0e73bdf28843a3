#!/usr/bin/env python3
"""Timing comparison of the compiled and pure-numpy kernel backends.

Runs the two hot kernels (the Bellman grid sweep and the batched episode
simulator) through both backends on identical inputs and prints wall times.
The first compiled call includes JIT compilation and is reported separately.

Usage: python benchmarks/bench_backends.py [--episodes 20000] [--sweeps 20]
"""
import argparse
import time

import numpy as np

from gepower import kernels, sim, solver
from gepower.model import ChannelParams, ProblemSpec, RewardSchedule

SPEC = ProblemSpec(ChannelParams(0.1, 0.9),
                   RewardSchedule((3.0, 2.0, 1.78), (1.5, 1.0, 0.89)), 0.9)


def time_sweeps(backend, resolution, repeats):
    grid = solver.build_grid(SPEC, resolution)
    tables = solver.sweep_tables(SPEC, grid)
    values = np.random.default_rng(0).uniform(0, 30, grid.shape)
    kernels.action_values(values, tables, SPEC.beta, backend=backend)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        q = kernels.action_values(values, tables, SPEC.beta, backend=backend)
        values = q.max(axis=0)
    return (time.perf_counter() - t0) / repeats


def time_sim(backend, episodes, horizon):
    pol = sim.myopic_policy(SPEC)
    sim.simulate_rewards(SPEC, pol, (0.5, 0.5, 0.5), 128, horizon, 1,
                         backend=backend)  # warm up
    t0 = time.perf_counter()
    sim.simulate_rewards(SPEC, pol, (0.5, 0.5, 0.5), episodes, horizon, 1,
                         backend=backend)
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=20_000)
    ap.add_argument("--horizon", type=int, default=200)
    ap.add_argument("--sweeps", type=int, default=20)
    args = ap.parse_args()

    backends = ["numpy"]
    if kernels._numba_available():
        t0 = time.perf_counter()
        grid = solver.build_grid(SPEC, 5)
        tables = solver.sweep_tables(SPEC, grid)
        kernels.action_values(np.zeros(grid.shape), tables, SPEC.beta,
                              backend="numba")
        sim.simulate_rewards(SPEC, sim.myopic_policy(SPEC), (0.5, 0.5, 0.5),
                             8, 4, 0, backend="numba")
        print(f"numba warm-up (compile or cache load): {time.perf_counter() - t0:.2f}s")
        backends.append("numba")
    else:
        print("numba not importable; benchmarking the numpy backend only")

    print(f"\n{'kernel':<28}" + "".join(f"{b:>12}" for b in backends) + f"{'ratio':>9}")
    rows = [
        ("bellman sweep 21^3", lambda b: time_sweeps(b, 21, args.sweeps)),
        ("bellman sweep 31^3", lambda b: time_sweeps(b, 31, max(args.sweeps // 2, 5))),
        (f"simulate {args.episodes}x{args.horizon}",
         lambda b: time_sim(b, args.episodes, args.horizon)),
    ]
    for label, fn in rows:
        times = [fn(b) for b in backends]
        ratio = times[0] / times[-1] if len(times) > 1 and times[-1] > 0 else float("nan")
        cells = "".join(f"{t * 1e3:>10.1f}ms" for t in times)
        print(f"{label:<28}{cells}{ratio:>8.1f}x")


if __name__ == "__main__":
    main()
