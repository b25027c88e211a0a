"""Sampled re-checks of a finished run: invariance, tightening and safe-set properties.

Every check works from stored artifacts alone, so a run can be validated
from disk without repeating the learning iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible
from .error_invariant import verify_invariance
from .flat_system import forward_shift
from .geometry import Box, contains_many
from .safe_set import (
    SafeSetStore,
    barycentric_cost,
    hull_point,
    sample_hull,
    stage_cost,
    successor,
)

TOL = 1e-6


@dataclass
class CheckReport:
    name: str
    passed: bool
    details: list = field(default_factory=list)

    def line(self) -> str:
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'}"


def check_invariance(model, K, arts, state_box: Box, input_box: Box, samples: int = 10_000,
                     seed: int = 0) -> CheckReport:
    """Sampled one-step invariance of every error set plus nesting across iterations."""
    rng = np.random.default_rng(seed)
    details, ok = [], True
    for i, a in enumerate(arts):
        bad = verify_invariance(model, K, a.E.rpi, a.D_box, state_box, input_box, samples, rng)
        nested = True
        if i > 0:
            prev = arts[i - 1].E
            nested = bool(np.all(contains_many(prev.rpi, a.E.rpi.vertices, 1e-9)))
            nested &= prev.rpi_box.contains_box(a.E.rpi_box, 1e-9)
        details.append({"j": a.j, "violations": bad, "nested": nested})
        ok &= bad == 0 and nested
    return CheckReport("invariance", bool(ok), details)


def check_tightening(K, arts, X: Box, U: Box, samples: int = 10_000, seed: int = 0) -> CheckReport:
    """Monotone growth of the tightened boxes and sampled x_bar + e in X, u_bar + K e in U."""
    rng = np.random.default_rng(seed)
    K = np.atleast_2d(K)
    details, ok = [], True
    for i, a in enumerate(arts):
        grows = True
        if i > 0:
            p = arts[i - 1].tight
            grows = a.tight.X_bar.contains_box(p.X_bar, 1e-9) and a.tight.U_bar.contains_box(p.U_bar, 1e-9)
        V = a.E.rpi.vertices
        k_v = samples // 4
        e = np.vstack([V[rng.integers(0, V.shape[0], size=k_v)], a.E.rpi.sample(rng, samples - k_v)])
        xb = a.tight.X_bar.sample(rng, samples)
        ub = a.tight.U_bar.sample(rng, samples)
        # half of the nominal samples sit on corners of the tightened boxes
        corner = rng.random(samples) < 0.5
        xv, uv = a.tight.X_bar.vertices(), a.tight.U_bar.vertices()
        xb[corner] = xv[rng.integers(0, xv.shape[0], size=int(corner.sum()))]
        ub[corner] = uv[rng.integers(0, uv.shape[0], size=int(corner.sum()))]
        x = xb + e
        u = ub + e @ K.T
        bad_x = int(np.sum(np.any((x < X.lb - TOL) | (x > X.ub + TOL), axis=1)))
        bad_u = int(np.sum(np.any((u < U.lb - TOL) | (u > U.ub + TOL), axis=1)))
        details.append({"j": a.j, "grows": bool(grows), "state_violations": bad_x, "input_violations": bad_u})
        ok &= grows and bad_x == 0 and bad_u == 0
    return CheckReport("tightening", bool(ok), details)


def _feasible_lifted(model, Y, tight, tol) -> bool:
    """True state/input of a lifted output and its informative bounds inside the tightened boxes."""
    x = model.Fx(Y[:, :-1])
    u = model.Fu(Y)
    if not (tight.X_bar.contains(x, tol) and tight.U_bar.contains(u, tol)):
        return False
    lo, hi = model.bound_pieces(Y)
    lo, hi = np.min(lo, axis=0), np.max(hi, axis=0)
    mask = model.informative_mask
    lb = np.concatenate([tight.X_bar.lb, tight.U_bar.lb])
    ub = np.concatenate([tight.X_bar.ub, tight.U_bar.ub])
    if np.any((lo < lb - tol)[mask]) or np.any((hi > ub + tol)[mask]):
        return False
    if model.admissible is not None and np.min(model.admissible(Y)) < -tol:
        return False
    return True


def safe_set_for(store: SafeSetStore, j: int) -> SafeSetStore:
    """The safe set available to iteration ``j`` (trajectories of iterations before j)."""
    return SafeSetStore(store.model, store.goal, [t for t in store.trajectories if t.iteration < j])


def check_safe_set(store: SafeSetStore, arts, samples: int = 200, seed: int = 0,
                   tol: float = TOL) -> CheckReport:
    """Successor feasibility and control-Lyapunov decrease on sampled hull points.

    For each iteration ``j`` the hull of the windows stored before ``j`` is
    sampled.  The successor of a hull point must be in the hull with a
    feasible lifted output, and the barycentric value must drop by at least
    the stage cost of that lifted output.
    """
    rng = np.random.default_rng(seed)
    model = store.model
    details, ok = [], True
    for a in arts:
        sub = safe_set_for(store, a.j)
        with_next = np.flatnonzero(sub.has_next)
        bad_succ = bad_clf = 0
        for lam in sample_hull(sub, rng, samples):
            w = hull_point(sub, lam)
            try:
                V, lam_star = barycentric_cost(sub, w, with_next)
            except Infeasible:
                bad_clf += 1
                continue
            y_next, lam_next = successor(sub, lam_star)
            w_next = forward_shift(w, y_next)
            Y = np.column_stack([w, y_next])
            shifted = np.max(np.abs(hull_point(sub, lam_next) - w_next))
            if shifted > tol or not _feasible_lifted(model, Y, a.tight, tol):
                bad_succ += 1
            try:
                V_next, _ = barycentric_cost(sub, w_next)
            except Infeasible:
                bad_succ += 1
                continue
            if V_next > V - float(stage_cost(model, Y, sub.goal)) + tol:
                bad_clf += 1
        details.append({"j": a.j, "successor_violations": bad_succ, "clf_violations": bad_clf})
        ok &= bad_succ == 0 and bad_clf == 0
    return CheckReport("safe_set", bool(ok), details)
