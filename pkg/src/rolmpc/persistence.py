"""Run storage: one JSON-lines file per iteration plus a JSON manifest.

Floats are written with ``repr`` precision and keys in a fixed order, so
reading a run and writing it again reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .error_invariant import InvariantSet
from .geometry import Box
from .lmpc import IterationArtifacts, IterationRecord
from .safe_set import SafeSetStore
from .tightening import TightenedConstraints
from .uncertainty import SupportEstimate

MANIFEST = "manifest.json"
SAFE_SET = "safe_set.json"
FORMAT_VERSION = 1


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _list(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def record_lines(rec: IterationRecord) -> list:
    lines = []
    T = rec.u.shape[0]
    for t in range(T + 1):
        last = t == T
        lines.append(_dump({
            "j": rec.j, "t": t,
            "x": _list(rec.x[t]), "x_bar": _list(rec.x_bar[t]),
            "u": None if last else _list(rec.u[t]),
            "d": None if last else _list(rec.d[t]),
            "u_bar": None if last else _list(rec.u_bar[t]),
            "J": None if last else float(rec.J[t]),
            "solve_ms": None if last else float(rec.solve_ms[t]),
        }))
    return lines


def write_iteration(out_dir: str, rec: IterationRecord) -> str:
    name = f"iteration_{rec.j}.jsonl"
    with open(os.path.join(out_dir, name), "w") as fh:
        fh.write("\n".join(record_lines(rec)) + "\n")
    return name


def read_iteration(path: str, nominal_outputs=None, iteration_cost: float = float("nan")) -> IterationRecord:
    with open(path) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    if not rows:
        raise ValueError(f"{path} is empty")
    steps = rows[:-1]

    def stack(key, src):
        return np.array([r[key] for r in src], dtype=float)

    m = len(rows[0]["u"]) if steps else 0
    return IterationRecord(
        j=int(rows[0]["j"]),
        x=stack("x", rows), u=stack("u", steps).reshape(-1, m), d=stack("d", steps).reshape(len(steps), -1),
        x_bar=stack("x_bar", rows), u_bar=stack("u_bar", steps).reshape(-1, m),
        J=stack("J", steps), solve_ms=stack("solve_ms", steps),
        nominal_outputs=np.zeros((0, 0)) if nominal_outputs is None else np.asarray(nominal_outputs, float),
        iteration_cost=iteration_cost,
    )


def artifacts_to_dict(a: IterationArtifacts) -> dict:
    return {"j": a.j, "support": a.support.to_dict(), "D_box": a.D_box.to_dict(), "invariant": a.E.to_dict(),
            "tightened": a.tight.to_dict(), "L_hat": a.L_hat, "gamma_hat": a.gamma_hat}


def artifacts_from_dict(d) -> IterationArtifacts:
    return IterationArtifacts(int(d["j"]), SupportEstimate.from_dict(d["support"]), Box.from_dict(d["D_box"]),
                              InvariantSet.from_dict(d["invariant"]), TightenedConstraints.from_dict(d["tightened"]),
                              float(d["L_hat"]), float(d["gamma_hat"]))


class RunWriter:
    """Callback for ``run_algorithm`` persisting every iteration as it completes."""

    def __init__(self, out_dir: str, config: dict, K):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.manifest = {"version": FORMAT_VERSION, "config": config,
                         "K": np.asarray(K, dtype=float).tolist(), "iterations": []}

    def __call__(self, rec: IterationRecord, art: Optional[IterationArtifacts], store: Optional[SafeSetStore]):
        name = write_iteration(self.out_dir, rec)
        entry = {"j": rec.j, "records": name, "steps": int(rec.steps),
                 "artifacts": None if art is None else artifacts_to_dict(art)}
        self.manifest["iterations"].append(entry)
        if store is not None:
            # the seed's cost is known once it has been stored
            for e in self.manifest["iterations"]:
                tr = next((t for t in store.trajectories if t.iteration == e["j"]), None)
                if tr is not None:
                    e["iteration_cost"] = float(tr.costs[0])
            with open(os.path.join(self.out_dir, SAFE_SET), "w") as fh:
                fh.write(_dump(store.to_dict()) + "\n")
        write_manifest(self.out_dir, self.manifest)


def write_manifest(out_dir: str, manifest: dict) -> None:
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        fh.write(_dump(manifest) + "\n")


def read_manifest(out_dir: str) -> dict:
    with open(os.path.join(out_dir, MANIFEST)) as fh:
        return json.load(fh)


@dataclass
class LoadedRun:
    manifest: dict
    records: list
    artifacts: list
    store: Optional[SafeSetStore]

    @property
    def K(self) -> np.ndarray:
        return np.asarray(self.manifest["K"], dtype=float)

    @property
    def config(self) -> dict:
        return self.manifest["config"]


def load_run(out_dir: str, model) -> LoadedRun:
    manifest = read_manifest(out_dir)
    store = None
    path = os.path.join(out_dir, SAFE_SET)
    if os.path.exists(path):
        with open(path) as fh:
            store = SafeSetStore.from_dict(json.load(fh), model)
    records, arts = [], []
    for e in manifest["iterations"]:
        nominal = None
        if store is not None:
            tr = next((t for t in store.trajectories if t.iteration == e["j"]), None)
            nominal = None if tr is None else tr.outputs
        records.append(read_iteration(os.path.join(out_dir, e["records"]), nominal,
                                      float(e.get("iteration_cost", float("nan")))))
        if e["artifacts"] is not None:
            arts.append(artifacts_from_dict(e["artifacts"]))
    return LoadedRun(manifest, records, arts, store)


def save_run(out_dir: str, run: LoadedRun) -> None:
    """Write a loaded run back to disk (used for the round-trip check)."""
    os.makedirs(out_dir, exist_ok=True)
    for rec, e in zip(run.records, run.manifest["iterations"]):
        with open(os.path.join(out_dir, e["records"]), "w") as fh:
            fh.write("\n".join(record_lines(rec)) + "\n")
    if run.store is not None:
        with open(os.path.join(out_dir, SAFE_SET), "w") as fh:
            fh.write(_dump(run.store.to_dict()) + "\n")
    manifest = dict(run.manifest)
    arts = {a.j: a for a in run.artifacts}
    manifest["iterations"] = [
        {**e, "artifacts": None if e["artifacts"] is None else artifacts_to_dict(arts[e["j"]])}
        for e in run.manifest["iterations"]
    ]
    write_manifest(out_dir, manifest)
