"""Run the chicane experiment, validate it from disk and export every CSV table.

    python3 scripts/run_bicycle.py --out runs/chicane --iters 5
"""

import argparse
import os
import sys

from rolmpc import cli


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/chicane")
    ap.add_argument("--iters", type=int, default=5)
    ap.add_argument("--config", default=os.path.join(here, "..", "configs", "bicycle.yaml"))
    args = ap.parse_args()

    code = cli.main(["run", "--config", args.config, "--iters", str(args.iters), "--out", args.out])
    if code:
        return code
    code = cli.main(["validate", args.out])
    tables = os.path.join(args.out, "tables")
    os.makedirs(tables, exist_ok=True)
    for kind in cli.PLOT_KINDS:
        cli.main(["plot-data", kind, args.out, "--out", os.path.join(tables, f"{kind}.csv")])
    print(f"tables written to {tables}")
    return code


if __name__ == "__main__":
    sys.exit(main())
