"""Command line entry point: ``rolmpc run | validate | plot-data``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from typing import Optional

import numpy as np
import yaml

from .bicycle_demo import DemoConfig, run, setup
from .errors import RolmpcError
from .persistence import RunWriter, load_run, read_manifest
from .validation import check_invariance, check_safe_set, check_tightening

log = logging.getLogger("rolmpc")

PLOT_KINDS = ("supports", "tightened", "costs", "trajectories", "solve-times")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def load_config(path: Optional[str]) -> DemoConfig:
    if path is None:
        return DemoConfig()
    with open(path) as fh:
        return DemoConfig.from_dict(yaml.safe_load(fh) or {})


def load_stored(run_dir: str):
    """(config, setup, LoadedRun) for a run directory written by ``run``."""
    cfg = DemoConfig.from_dict(read_manifest(run_dir)["config"])
    s = setup(cfg)
    return cfg, s, load_run(run_dir, s.model)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg.lmpc.max_iters = args.iters
    if args.seed is not None:
        cfg.lmpc.seed = args.seed
    s = setup(cfg)
    writer = RunWriter(args.out, cfg.to_dict(), s.K.K)

    def report(rec, art, store):
        writer(rec, art, store)
        if rec.j > 0:
            print(f"iteration {rec.j}: {rec.steps} steps, cost {rec.iteration_cost:.6f}, "
                  f"median solve {np.median(rec.solve_ms):.1f} ms", flush=True)

    run(cfg, report)
    print(f"run written to {args.out}")
    return 0


def cmd_validate(args) -> int:
    cfg, s, data = load_stored(args.run_dir)
    p = s.params
    reports = [
        check_invariance(s.model, s.K.K, data.artifacts, p.operating_state_box, p.operating_input_box,
                         args.samples, args.seed),
        check_tightening(s.K.K, data.artifacts, p.X, p.U, args.samples, args.seed),
        check_safe_set(data.store, data.artifacts, args.hull_samples, args.seed),
    ]
    for r in reports:
        print(r.line())
        for d in r.details:
            print("  " + ", ".join(f"{k}={v}" for k, v in d.items()))
    return 0 if all(r.passed for r in reports) else 1


def plot_rows(kind: str, data) -> tuple:
    """Header and rows of one CSV table."""
    arts, recs = data.artifacts, data.records
    if kind == "supports":
        n = arts[0].support.ellipsoid.center.size if arts else 0
        head = ["iteration", "trace"] + [f"center_{i}" for i in range(n)] \
            + [f"shape_{i}{k}" for i in range(n) for k in range(n)] \
            + [f"d_lb_{i}" for i in range(n)] + [f"d_ub_{i}" for i in range(n)]
        rows = [[a.j, a.support.trace, *a.support.ellipsoid.center, *a.support.ellipsoid.shape.ravel(),
                 *a.D_box.lb, *a.D_box.ub] for a in arts]
    elif kind == "tightened":
        n = arts[0].tight.X_bar.lb.size if arts else 0
        m = arts[0].tight.U_bar.lb.size if arts else 0
        head = ["iteration"] + [f"x_bar_lb_{i}" for i in range(n)] + [f"x_bar_ub_{i}" for i in range(n)] \
            + [f"u_bar_lb_{i}" for i in range(m)] + [f"u_bar_ub_{i}" for i in range(m)] \
            + [f"e_box_{i}" for i in range(n)]
        rows = [[a.j, *a.tight.X_bar.lb, *a.tight.X_bar.ub, *a.tight.U_bar.lb, *a.tight.U_bar.ub,
                 *a.E.rpi_box.ub] for a in arts]
    elif kind == "costs":
        head = ["iteration", "steps", "cost"]
        rows = [[r.j, r.steps, r.iteration_cost] for r in recs if r.j > 0]
    elif kind == "trajectories":
        n, m = recs[0].x.shape[1], recs[0].u.shape[1]
        head = ["iteration", "t"] + [f"x_{i}" for i in range(n)] + [f"u_{i}" for i in range(m)]
        rows = []
        for r in recs:
            for t in range(r.x.shape[0]):
                u = r.u[t] if t < r.steps else [None] * m
                rows.append([r.j, t, *r.x[t], *u])
    elif kind == "solve-times":
        head = ["iteration", "t", "solve_ms"]
        rows = [[r.j, t, ms] for r in recs if r.j > 0 for t, ms in enumerate(r.solve_ms)]
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return head, rows


def cmd_plot_data(args) -> int:
    _, _, data = load_stored(args.run_dir)
    head, rows = plot_rows(args.kind, data)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rolmpc", description="Robust output-lifted learning MPC")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the chicane experiment")
    r.add_argument("--config", help="YAML configuration (defaults if omitted)")
    r.add_argument("--iters", type=_positive, default=5, help="learning iterations (>= 1)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="re-check a stored run")
    v.add_argument("run_dir")
    v.add_argument("--samples", type=int, default=10_000)
    v.add_argument("--hull-samples", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_validate)

    p = sub.add_parser("plot-data", help="export a CSV table from a stored run")
    p.add_argument("kind", choices=PLOT_KINDS)
    p.add_argument("run_dir")
    p.add_argument("--out", help="CSV file (stdout if omitted)")
    p.set_defaults(func=cmd_plot_data)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RolmpcError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
