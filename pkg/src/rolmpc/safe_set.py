"""Convex output safe set: stored output windows, costs-to-go and the barycentric terminal cost."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, Infeasible, SolverFailure, SpecViolation
from .error_invariant import InvariantSet
from .flat_system import SystemModel
from .geometry import Box
from .solver import Status, solve_lp
from .tightening import TightenedConstraints

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
MEMBER_TOL = 1e-7
PRUNE_TOL = 1e-9


@dataclass(frozen=True)
class GoalSpec:
    """Goal set ``X_G``, its nominal tightening ``X_G_bar`` and the nominal input box."""

    X_G: Box
    X_G_bar: Box
    U_nom: Box

    def check(self, E: InvariantSet, tol: float = 1e-9) -> None:
        if not self.X_G.contains_box(self.X_G_bar + E.rpi_box, tol):
            raise ValueError("X_G_bar + Box(E) is not inside X_G")

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([self.X_G_bar.lb, self.U_nom.lb])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([self.X_G_bar.ub, self.U_nom.ub])

    def to_dict(self) -> dict:
        return {"X_G": self.X_G.to_dict(), "X_G_bar": self.X_G_bar.to_dict(), "U_nom": self.U_nom.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "GoalSpec":
        return cls(Box.from_dict(d["X_G"]), Box.from_dict(d["X_G_bar"]), Box.from_dict(d["U_nom"]))


def stage_cost(model: SystemModel, Y, goal: GoalSpec) -> np.ndarray:
    """Sum of hinge distances of the bounding intervals to the goal boxes (batched over Y)."""
    lo, hi = model.bound_pieces(np.asarray(Y, dtype=float))
    below = np.maximum(goal.lower - np.min(lo, axis=-2), 0.0)
    above = np.maximum(np.max(hi, axis=-2) - goal.upper, 0.0)
    return np.sum(below + above, axis=-1)


def task_cost(x, goal_s: float = 40.0) -> np.ndarray:
    """Bicycle task cost max(goal_s - s, 0)."""
    return np.maximum(goal_s - np.asarray(x, dtype=float)[..., 0], 0.0)


@dataclass
class StoredTrajectory:
    """Nominal output sequence of one iteration plus its costs-to-go per window."""

    iteration: int
    outputs: np.ndarray           # m x T
    costs: np.ndarray             # T - R + 1 costs-to-go, one per window

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "outputs": self.outputs.tolist(), "costs": self.costs.tolist()}

    @classmethod
    def from_dict(cls, d) -> "StoredTrajectory":
        return cls(int(d["iteration"]), np.asarray(d["outputs"], float), np.asarray(d["costs"], float))


@dataclass
class SafeSetStore:
    """Generator representation of the convex output safe set.

    Generator ``g`` is the window ``W[g]`` (flattened column-major ``m x R``),
    with cost-to-go ``C[g]`` and, except for the last window of a trajectory,
    the next output ``nxt[g]`` and successor index ``succ[g]``.
    """

    model: SystemModel
    goal: GoalSpec
    trajectories: list = field(default_factory=list)

    def __post_init__(self):
        self._rebuild()

    def _rebuild(self):
        m, R = self.model.m, self.model.R
        W, nxt, C, succ, it, tm = [], [], [], [], [], []
        offset = 0
        for tr in self.trajectories:
            Ys = tr.outputs
            k = Ys.shape[1] - R + 1
            for t in range(k):
                W.append(Ys[:, t: t + R].reshape(-1, order="F"))
                last = t == k - 1
                nxt.append(np.full(m, np.nan) if last else Ys[:, t + R])
                succ.append(-1 if last else offset + t + 1)
                C.append(tr.costs[t])
                it.append(tr.iteration)
                tm.append(t)
            offset += k
        dim = m * R
        self.W = np.array(W).reshape(-1, dim)
        self.nxt = np.array(nxt).reshape(-1, m)
        self.C = np.array(C, dtype=float)
        self.succ = np.array(succ, dtype=int)
        self.gen_iteration = np.array(it, dtype=int)
        self.gen_time = np.array(tm, dtype=int)

    @property
    def size(self) -> int:
        return self.W.shape[0]

    @property
    def has_next(self) -> np.ndarray:
        return self.succ >= 0

    def window(self, g) -> np.ndarray:
        return self.W[g].reshape(self.model.m, self.model.R, order="F")

    def lifted(self, g) -> np.ndarray:
        """Lifted output [window, next output] of generator ``g`` (requires a successor)."""
        return np.column_stack([self.window(g), self.nxt[g]])

    def to_dict(self) -> dict:
        return {"goal": self.goal.to_dict(), "trajectories": [t.to_dict() for t in self.trajectories]}

    @classmethod
    def from_dict(cls, d, model: SystemModel) -> "SafeSetStore":
        return cls(model, GoalSpec.from_dict(d["goal"]),
                   [StoredTrajectory.from_dict(t) for t in d["trajectories"]])


def costs_to_go(model: SystemModel, outputs, goal: GoalSpec) -> np.ndarray:
    """Backward recursion C_t = c(Y_t) + C_{t+1}, with zero cost on the last window."""
    Ys = np.asarray(outputs, dtype=float)
    R = model.R
    T = Ys.shape[1]
    lifted = np.stack([Ys[:, t: t + R + 1] for t in range(T - R)])
    stage = stage_cost(model, lifted, goal)
    C = np.zeros(T - R + 1)
    C[:-1] = np.cumsum(stage[::-1])[::-1]
    return C


def check_nominal(model: SystemModel, outputs, tight: TightenedConstraints,
                  E: Optional[InvariantSet] = None, errors=None, tol: float = 1e-7) -> None:
    """Raise SpecViolation unless the nominal output sequence may enter the safe set.

    Checks: tracking errors (if given) in the recording invariant, exact
    nominal dynamics, states/inputs in the tightened boxes, and informative
    bounding intervals inside them.
    """
    Ys = np.asarray(outputs, dtype=float)
    R = model.R
    T = Ys.shape[1]
    if Ys.ndim != 2 or Ys.shape[0] != model.m or T < R + 1:
        raise DimensionMismatch("outputs must be m x T with T > R")
    if errors is not None and E is not None:
        errors = np.atleast_2d(errors)
        inside = E.contains(errors, tol=1e-6)
        if not np.all(inside):
            raise SpecViolation("error_in_tube", f"{int(np.sum(~inside))} tracking errors outside the invariant")
    wins = np.stack([Ys[:, t: t + R] for t in range(T - R + 1)])
    lifted = np.stack([Ys[:, t: t + R + 1] for t in range(T - R)])
    xs = model.Fx(wins)
    us = model.Fu(lifted)
    res = np.max(np.abs(model.f(xs[:-1], us) - xs[1:]), initial=0.0)
    if res > RESIDUAL_TOL:
        raise SpecViolation("nominal_dynamics", f"residual {res:.2e}")
    Xb, Ub = tight.X_bar, tight.U_bar
    if not np.all((xs >= Xb.lb - tol) & (xs <= Xb.ub + tol)):
        raise SpecViolation("state_in_tightened", "nominal state outside the tightened state box")
    if not np.all((us >= Ub.lb - tol) & (us <= Ub.ub + tol)):
        raise SpecViolation("input_in_tightened", "nominal input outside the tightened input box")
    lo, hi = model.bound_pieces(lifted)
    mask = model.informative_mask
    lb = np.concatenate([Xb.lb, Ub.lb])[mask]
    ub = np.concatenate([Xb.ub, Ub.ub])[mask]
    if not (np.all(np.min(lo, axis=-2)[:, mask] >= lb - tol) and np.all(np.max(hi, axis=-2)[:, mask] <= ub + tol)):
        raise SpecViolation("bounding_in_tightened", "bounding interval outside the tightened boxes")
    if model.admissible is not None and np.min(model.admissible(Ys[None])) < -tol:
        raise SpecViolation("bounding_in_tightened", "outputs leave the region where the bounds are valid")


def insert_iteration(store: SafeSetStore, outputs, iteration: int, tight: TightenedConstraints,
                     E: Optional[InvariantSet] = None, errors=None) -> SafeSetStore:
    """Validate a nominal output sequence and append its windows with costs-to-go."""
    Ys = np.asarray(outputs, dtype=float)
    check_nominal(store.model, Ys, tight, E, errors)
    model = store.model
    x_last = model.Fx(Ys[:, Ys.shape[1] - model.R:])
    if not store.goal.X_G_bar.contains(x_last, tol=1e-7):
        raise SpecViolation("goal", "the last stored window does not end in the nominal goal set")
    C = costs_to_go(store.model, Ys, store.goal)
    return SafeSetStore(store.model, store.goal,
                        store.trajectories + [StoredTrajectory(int(iteration), Ys.copy(), C)])


def _subset(store, subset):
    return np.arange(store.size) if subset is None else np.asarray(subset, dtype=int)


def barycentric_cost(store: SafeSetStore, query, subset: Optional[Sequence[int]] = None):
    """min sum lam_i C_i over lam >= 0, sum lam = 1, sum lam_i W_i = query.

    Returns (value, lam over all generators).  Raises Infeasible outside the hull.
    """
    q = np.asarray(query, dtype=float).reshape(-1, order="F")
    idx = _subset(store, subset)
    if q.size != store.W.shape[1]:
        raise DimensionMismatch("query window has the wrong size")
    P = store.W[idx]
    k, d = P.shape
    A_eq = np.vstack([P.T, np.ones((1, k))])
    b_eq = np.concatenate([q, [1.0]])
    res = solve_lp(store.C[idx], A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * k)
    if res.status is Status.INFEASIBLE:
        # HiGHS rejects hull points whose exact weights leave a ~1e-9 residual
        A_ub = np.vstack([P.T, -P.T])
        b_ub = np.concatenate([q + MEMBER_TOL, MEMBER_TOL - q])
        res = solve_lp(store.C[idx], A_eq=np.ones((1, k)), b_eq=[1.0], A_ub=A_ub, b_ub=b_ub,
                       bounds=[(0, None)] * k)
        if res.status is not Status.OPTIMAL:
            raise Infeasible("query window outside the convex hull of stored windows")
    if res.status is not Status.OPTIMAL:
        raise SolverFailure("barycentric LP failed", res.status)
    lam = np.zeros(store.size)
    lam[idx] = np.clip(res.x, 0.0, None)
    return float(res.value), lam


def hull_fit(store: SafeSetStore, query, subset=None, penalty: float = 1e4):
    """Cheapest multipliers whose hull point is L1-closest to ``query``.

    Solves min C.lam + penalty |W^T lam - q|_1; returns (lam, hull point window).
    Used to clean up multipliers returned by a local NLP solver.
    """
    q = np.asarray(query, dtype=float).reshape(-1, order="F")
    idx = _subset(store, subset)
    P = store.W[idx]
    k, d = P.shape
    c = np.concatenate([store.C[idx], np.full(2 * d, penalty)])
    A_eq = np.zeros((d + 1, k + 2 * d))
    A_eq[:d, :k] = P.T
    A_eq[:d, k: k + d] = np.eye(d)
    A_eq[:d, k + d:] = -np.eye(d)
    A_eq[d, :k] = 1.0
    res = solve_lp(c, A_eq=A_eq, b_eq=np.concatenate([q, [1.0]]), bounds=[(0, None)] * (k + 2 * d))
    if res.status is not Status.OPTIMAL:
        raise SolverFailure("hull fit LP failed", res.status)
    lam = np.zeros(store.size)
    lam[idx] = np.clip(res.x[:k], 0.0, None)
    lam /= lam.sum()
    return lam, hull_point(store, lam)


def terminal_membership(store: SafeSetStore, query, subset=None) -> bool:
    try:
        barycentric_cost(store, query, subset)
        return True
    except Infeasible:
        return False


def hull_point(store: SafeSetStore, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    return (lam @ store.W).reshape(store.model.m, store.model.R, order="F")


def successor(store: SafeSetStore, lam):
    """Shift a hull point along the stored trajectories.

    Returns (next output, successor multipliers).  Every generator in the
    support of ``lam`` must have a successor.
    """
    lam = np.asarray(lam, dtype=float)
    sup = np.flatnonzero(lam > 0)
    if np.any(store.succ[sup] < 0):
        raise ValueError("multipliers put weight on a generator without successor")
    y_next = lam[sup] @ store.nxt[sup]
    lam_next = np.zeros_like(lam)
    np.add.at(lam_next, store.succ[sup], lam[sup])
    return y_next, lam_next


def sample_hull(store: SafeSetStore, rng: np.random.Generator, k: int, max_generators: int = 6):
    """Random multipliers over at most ``max_generators`` generators that have successors."""
    cand = np.flatnonzero(store.has_next)
    out = np.zeros((k, store.size))
    for i in range(k):
        p = int(rng.integers(1, max_generators + 1))
        sel = rng.choice(cand, size=min(p, cand.size), replace=False)
        w = rng.dirichlet(np.ones(sel.size))
        out[i, sel] = w
    return out


def prune(store: SafeSetStore) -> np.ndarray:
    """Indices of generators that the barycentric LP cannot do without.

    Generator ``i`` is dropped when the remaining generators represent its
    window at a cost no larger than ``C_i``; the value function is then
    unchanged on the hull.  Generators are examined in order, each against
    the ones still kept.
    """
    keep = np.ones(store.size, dtype=bool)
    for i in range(store.size):
        others = np.flatnonzero(keep & (np.arange(store.size) != i))
        if others.size == 0:
            continue
        try:
            val, _ = barycentric_cost(store, store.W[i], others)
        except Infeasible:
            continue
        if val <= store.C[i] + PRUNE_TOL:
            keep[i] = False
    return np.flatnonzero(keep)
