"""Bounding-function-aware tightening of the nominal state and input boxes.

``S_x`` (``S_u``) is the set of nominal states (inputs) that admit a lifted
output whose bounding-function interval stays inside the hat box.  The
tightened boxes are grown from the previous ones by scaling and translation
while every grid point on their facets stays in ``S``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import Infeasible
from .error_invariant import InvariantSet
from .flat_system import SystemModel
from .geometry import Box, box_pontryagin_diff
from .solver import NlpProblem, NlpStatus, fd_jacobian_batched, solve_nlp

log = logging.getLogger(__name__)

GRID_DENSITY = 5
N_CANDIDATES = 256
FEAS_TOL = 1e-9
BISECTION_STEPS = 8
ROUNDS = 3


@dataclass(frozen=True)
class TightenedConstraints:
    X_bar: Box
    U_bar: Box
    X_hat: Box
    U_hat: Box
    alpha_x: np.ndarray
    alpha_u: np.ndarray
    v_x: np.ndarray
    v_u: np.ndarray
    iteration: int = 0

    def to_dict(self) -> dict:
        return {
            "X_bar": self.X_bar.to_dict(), "U_bar": self.U_bar.to_dict(),
            "X_hat": self.X_hat.to_dict(), "U_hat": self.U_hat.to_dict(),
            "alpha_x": np.asarray(self.alpha_x).tolist(), "alpha_u": np.asarray(self.alpha_u).tolist(),
            "v_x": np.asarray(self.v_x).tolist(), "v_u": np.asarray(self.v_u).tolist(),
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, d) -> "TightenedConstraints":
        return cls(Box.from_dict(d["X_bar"]), Box.from_dict(d["U_bar"]), Box.from_dict(d["X_hat"]),
                   Box.from_dict(d["U_hat"]), np.asarray(d["alpha_x"], float), np.asarray(d["alpha_u"], float),
                   np.asarray(d["v_x"], float), np.asarray(d["v_u"], float), int(d["iteration"]))


def hat_sets(X: Box, U: Box, E: InvariantSet, state_box: Optional[Box] = None,
             input_box: Optional[Box] = None):
    """X minus Box(E) and U minus Box(KE), optionally intersected with operating boxes."""
    X_hat = box_pontryagin_diff(X, E.rpi_box)
    U_hat = box_pontryagin_diff(U, E.input_image_box)
    if state_box is not None:
        X_hat = X_hat.intersect(state_box)
    if input_box is not None:
        U_hat = U_hat.intersect(input_box)
    return X_hat, U_hat


class MembershipOracle:
    """Membership in S_x (kind='x') or S_u (kind='u') for fixed hat boxes."""

    def __init__(self, model: SystemModel, X_hat: Box, U_hat: Box, kind: str, seed: int = 0):
        if kind not in ("x", "u"):
            raise ValueError("kind must be 'x' or 'u'")
        self.model = model
        self.X_hat = X_hat
        self.U_hat = U_hat
        self.kind = kind
        n, m = model.n, model.m
        self.comps = np.arange(n) if kind == "x" else np.arange(n, n + m)
        self.box = X_hat if kind == "x" else U_hat
        rng = np.random.default_rng(seed)
        other = U_hat if kind == "x" else X_hat
        self.others = np.vstack([other.center, other.sample(rng, N_CANDIDATES - 1)])
        self.nlp_calls = 0
        self._cache = {}

    # constraint values for a batch of lifted outputs, shape (..., k); >= 0 means satisfied
    def _ineq(self, Y):
        lo, hi = self.model.bound_pieces(Y)
        lb, ub = self.box.lb, self.box.ub
        parts = [(lo[..., :, self.comps] - lb).reshape(*Y.shape[:-2], -1),
                 (ub - hi[..., :, self.comps]).reshape(*Y.shape[:-2], -1)]
        if self.model.admissible is not None:
            parts.append(self.model.admissible(Y))
        return np.concatenate(parts, axis=-1)

    def _eq(self, Y, target):
        R = self.model.R
        val = self.model.Fx(Y[..., :, :R]) if self.kind == "x" else self.model.Fu(Y)
        return val - target

    def _guesses(self, point):
        """Lifted outputs generated by the nominal dynamics through ``point``."""
        f, h = self.model.f, self.model.h
        R = self.model.R
        k = self.others.shape[0]
        if self.kind == "x":
            xs = [np.repeat(point[None], k, axis=0)]
            us = self.others
            for _ in range(R):
                xs.append(f(xs[-1], us))
        else:
            xs = [self.others]
            us = np.repeat(point[None], k, axis=0)
            for _ in range(R):
                xs.append(f(xs[-1], us))
        Y = np.stack([h(x) for x in xs], axis=-1)
        if self.kind == "x":
            # state depends only on the first R outputs: extrapolate the last one
            Y2 = Y.copy()
            Y2[..., -1] = 2 * Y[..., -2] - Y[..., -3] if R >= 2 else Y[..., -1]
            Y = np.concatenate([Y, Y2], axis=0)
        return Y

    def violation(self, Y, point):
        g = self._ineq(Y)
        e = self._eq(Y, point)
        return np.maximum(np.max(np.maximum(-g, 0.0), axis=-1), np.max(np.abs(e), axis=-1))

    def check_many(self, points):
        """Membership of many points; returns (mask, witnesses)."""
        points = np.atleast_2d(points)
        out = np.zeros(points.shape[0], dtype=bool)
        wit = [None] * points.shape[0]
        for i, p in enumerate(points):
            out[i], wit[i] = self.check(p)
        return out, wit

    def check(self, point):
        point = np.asarray(point, dtype=float)
        key = point.tobytes()
        if key not in self._cache:
            self._cache[key] = self._check(point)
        return self._cache[key]

    def _check(self, point):
        if not self.box.contains(point, tol=FEAS_TOL):
            return False, None
        Ys = self._guesses(point)
        viol = self.violation(Ys, point)
        best = int(np.argmin(viol))
        if viol[best] <= FEAS_TOL:
            return True, Ys[best]
        return self._nlp(point, Ys[best])

    def _nlp(self, point, Y0):
        self.nlp_calls += 1
        shape = Y0.shape
        y0 = Y0.reshape(-1)
        prob = NlpProblem(
            dim=y0.size,
            objective=lambda y: 0.5 * float(np.sum((y - y0) ** 2)),
            gradient=lambda y: y - y0,
            eq=lambda y: self._eq(y.reshape(shape), point),
            eq_jac=lambda y: fd_jacobian_batched(lambda B: self._eq(B.reshape(-1, *shape), point), y),
            ineq=lambda y: self._ineq(y.reshape(shape)),
            ineq_jac=lambda y: fd_jacobian_batched(lambda B: self._ineq(B.reshape(-1, *shape)), y),
        )
        try:
            res = solve_nlp(prob, y0, max_iter=100, certify=False)
        except (ValueError, FloatingPointError):
            return False, None
        Y = res.x.reshape(shape)
        ok = res.status in (NlpStatus.CONVERGED, NlpStatus.MAX_ITERATIONS) and \
            self.violation(Y, point) <= 1e-8
        return (True, Y) if ok else (False, None)


def in_S_x(x, X_hat: Box, model: SystemModel, U_hat: Optional[Box] = None):
    U_hat = U_hat if U_hat is not None else Box(np.full(model.m, -1.0), np.full(model.m, 1.0))
    return MembershipOracle(model, X_hat, U_hat, "x").check(x)


def in_S_u(u, U_hat: Box, model: SystemModel, X_hat: Box):
    return MembershipOracle(model, X_hat, U_hat, "u").check(u)


def facet_grid(box: Box, density: int = GRID_DENSITY) -> np.ndarray:
    """Grid points on all 2n facets, ``density`` points per facet edge."""
    n = box.dim
    pts = []
    axes = [np.linspace(lo, hi, density) if hi > lo else np.array([lo]) for lo, hi in zip(box.lb, box.ub)]
    for i in range(n):
        others = [axes[k] for k in range(n) if k != i]
        mesh = np.meshgrid(*others, indexing="ij") if others else []
        flat = [g.reshape(-1) for g in mesh]
        count = flat[0].size if flat else 1
        for val in (box.lb[i], box.ub[i]):
            P = np.empty((count, n))
            j = 0
            for k in range(n):
                if k == i:
                    P[:, k] = val
                else:
                    P[:, k] = flat[j]
                    j += 1
            pts.append(P)
    P = np.unique(np.vstack(pts), axis=0)
    # corners first: they are the most likely to fail, which ends a check early
    w = np.where(box.ub > box.lb, box.ub - box.lb, 1.0)
    far = np.sum(np.abs((P - box.center) / w), axis=1)
    return P[np.argsort(-far, kind="stable")]


def _all_in(oracle: MembershipOracle, pts) -> bool:
    for p in pts:
        if not oracle.check(p)[0]:
            return False
    return True


def _bisect(ok, steps):
    """Largest t in [0, 1] with ok(t), assuming ok(0)."""
    if ok(1.0):
        return 1.0
    good, bad = 0.0, 1.0
    for _ in range(steps):
        mid = 0.5 * (good + bad)
        if ok(mid):
            good = mid
        else:
            bad = mid
    return good


def grow_box(prev: Box, oracle: MembershipOracle, density: int = GRID_DENSITY,
             steps: int = BISECTION_STEPS, rounds: int = ROUNDS) -> Box:
    """Enlarge ``prev`` towards the hat box while its gridded facets stay in S.

    A uniform expansion of all faces comes first (so that no single face
    grabs a corner that blocks the others), followed by face-by-face
    bisection.  Every accepted box passes the full facet check, so the
    result always contains ``prev``.
    """
    limit = oracle.box
    lb, ub = prev.lb.copy(), prev.ub.copy()

    def valid(tl, tu):
        return _all_in(oracle, facet_grid(Box(tl, tu), density))

    lo_gap, hi_gap = limit.lb - lb, limit.ub - ub
    tau = _bisect(lambda t: valid(lb + t * lo_gap, ub + t * hi_gap), steps)
    lb, ub = lb + tau * lo_gap, ub + tau * hi_gap
    for _ in range(rounds):
        moved = False
        for d in range(prev.dim):
            for side in (+1, -1):
                cur = ub[d] if side > 0 else lb[d]
                far = limit.ub[d] if side > 0 else limit.lb[d]
                if abs(far - cur) <= 1e-9 * max(1.0, abs(far)):
                    continue

                def ok(t):
                    tl, tu = lb.copy(), ub.copy()
                    if side > 0:
                        tu[d] = cur + t * (far - cur)
                    else:
                        tl[d] = cur + t * (far - cur)
                    return valid(tl, tu)

                t = _bisect(ok, steps)
                if t > 0:
                    moved = True
                    if side > 0:
                        ub[d] = cur + t * (far - cur)
                    else:
                        lb[d] = cur + t * (far - cur)
        if not moved:
            break
    return Box(lb, ub)


def _scale_params(prev: Box, new: Box):
    w_prev = prev.ub - prev.lb
    w_new = new.ub - new.lb
    alpha = np.where(w_prev > 0, w_new / np.where(w_prev > 0, w_prev, 1.0), 1.0)
    v = new.lb - alpha * prev.lb
    return alpha, v


def solve_tightening(prev_x: Box, prev_u: Box, X_hat: Box, U_hat: Box, model: SystemModel,
                     grid_density: int = GRID_DENSITY, iteration: int = 1,
                     check_prev: Optional[bool] = None) -> TightenedConstraints:
    """Grow the previous tightened boxes inside S_x and S_u.

    At the first iteration (``check_prev`` defaults to ``iteration == 1``) the
    starting boxes come from seed data and must be verified to lie in S;
    ``Infeasible`` is raised otherwise.  Later the previous boxes lie in S
    because S only grows as the invariant shrinks, so a failed membership
    check there is a false negative of the local witness search and is only
    logged.
    """
    if check_prev is None:
        check_prev = iteration == 1
    ox = MembershipOracle(model, X_hat, U_hat, "x")
    ou = MembershipOracle(model, X_hat, U_hat, "u")
    for oracle, box, name in ((ox, prev_x, "state"), (ou, prev_u, "input")):
        if not _all_in(oracle, facet_grid(box, grid_density)):
            if check_prev:
                raise Infeasible(f"previous {name} box is not inside S")
            log.warning("previous %s box not verified inside S; growing from it regardless", name)
    X_bar = grow_box(prev_x, ox, grid_density)
    U_bar = grow_box(prev_u, ou, grid_density)
    ax, vx = _scale_params(prev_x, X_bar)
    au, vu = _scale_params(prev_u, U_bar)
    log.info("tightening: %d + %d witness NLPs", ox.nlp_calls, ou.nlp_calls)
    return TightenedConstraints(X_bar, U_bar, X_hat, U_hat, ax, au, vx, vu, iteration)
