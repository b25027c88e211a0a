"""Summarise per-iteration MPC solve times of a stored run.

    python3 scripts/bench_solve_times.py runs/chicane
"""

import sys

import numpy as np

from rolmpc.cli import load_stored


def main(run_dir):
    _, _, data = load_stored(run_dir)
    print("iteration  steps  median_ms  p90_ms  max_ms")
    for r in data.records[1:]:
        ms = r.solve_ms
        print(f"{r.j:9d}  {r.steps:5d}  {np.median(ms):9.1f}  {np.percentile(ms, 90):6.1f}  {ms.max():6.1f}")


if __name__ == "__main__":
    main(sys.argv[1])
