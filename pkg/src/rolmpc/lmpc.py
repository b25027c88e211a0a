"""Robust output-lifted LMPC: the receding-horizon NLP, the tube policy and the iterative driver."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    AssumptionViolated,
    Infeasible,
    InfeasibleMpc,
    SolverFailure,
    SpecViolation,
    StepCapExceeded,
)
from .error_invariant import (
    ErrorPolicy,
    InvariantSet,
    SampledRpiConfig,
    nested_rpi,
    sampled_rpi,
    verify_invariance,
)
from .flat_system import SystemModel
from .geometry import Box, bounding_box, box_pontryagin_diff
from .safe_set import GoalSpec, SafeSetStore, hull_fit, hull_point, insert_iteration, successor
from .solver import NlpProblem, fd_jacobian_batched, solve_nlp
from .tightening import TightenedConstraints, hat_sets, solve_tightening
from .uncertainty import (
    SupportEstimate,
    build_support_sdp,
    estimate_constants,
    lipschitz_qc,
    subsample,
    transitions_from_trajectory,
)

log = logging.getLogger(__name__)

FEAS_TOL = 1e-7


@dataclass
class LmpcConfig:
    N: int = 10
    max_iters: int = 5
    step_cap: int = 400
    goal_tol: float = 1e-2
    n_local: int = 40
    nlp_max_iter: int = 100
    nlp_tol: float = 1e-6
    grid_density: int = 5
    qc_margin: float = 1.5
    max_per_iteration: int = 50
    seed: int = 0
    rpi: SampledRpiConfig = field(default_factory=SampledRpiConfig)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class MpcSolution:
    Y: np.ndarray              # m x (N+R) planned outputs
    lam: np.ndarray            # terminal multipliers over all generators
    x_bar: np.ndarray          # (N+1) x n
    u_bar: np.ndarray          # N x m
    objective: float
    source: str                # "solver" or "candidate"
    solve_ms: float = 0.0

    @property
    def terminal_window(self) -> np.ndarray:
        R = self.Y.shape[1] - self.u_bar.shape[0]
        return self.Y[:, -R:]


@dataclass
class IterationRecord:
    j: int
    x: np.ndarray
    u: np.ndarray
    d: np.ndarray
    x_bar: np.ndarray
    u_bar: np.ndarray
    J: np.ndarray
    solve_ms: np.ndarray
    nominal_outputs: np.ndarray
    iteration_cost: float = float("nan")   # cost-to-go of the stored nominal from x_S

    @property
    def steps(self) -> int:
        return self.u.shape[0]


def apply_policy(x, sol_or_xbar, ubar_or_K, K: Optional[ErrorPolicy] = None):
    """u = u_bar + K (x - x_bar); accepts (x, sol, K) or (x, x_bar, u_bar, K)."""
    if K is None:
        sol, K = sol_or_xbar, ubar_or_K
        x_bar, u_bar = sol.x_bar[0], sol.u_bar[0]
    else:
        x_bar, u_bar = sol_or_xbar, ubar_or_K
    return np.asarray(u_bar, float) + K(np.asarray(x, float) - np.asarray(x_bar, float))


# ---------------------------------------------------------------------------
# the finite-horizon problem


class MpcProblem:
    """Decision vector z = [vec(Y), lam_local, eps]; Y is m x (N+R), C-ordered."""

    def __init__(self, model: SystemModel, store: SafeSetStore, tight: TightenedConstraints,
                 N: int, gens: np.ndarray):
        self.model, self.store, self.tight, self.N = model, store, tight, N
        m, n, R = model.m, model.n, model.R
        self.m, self.n, self.R = m, n, R
        self.gens = np.asarray(gens, dtype=int)
        self.nY = m * (N + R)
        self.nL = self.gens.size
        goal = store.goal
        lb_all = np.concatenate([tight.X_bar.lb, tight.U_bar.lb])
        ub_all = np.concatenate([tight.X_bar.ub, tight.U_bar.ub])
        self.mask = model.informative_mask
        self.lb_inf, self.ub_inf = lb_all[self.mask], ub_all[self.mask]
        # hinge terms that can be nonzero on the feasible set
        self.act_lo = np.flatnonzero(goal.lower > lb_all + 1e-12)
        self.act_hi = np.flatnonzero(goal.upper < ub_all - 1e-12)
        self.g_lo, self.g_hi = goal.lower[self.act_lo], goal.upper[self.act_hi]
        self.nA = self.act_lo.size + self.act_hi.size
        self.nE = N * self.nA
        self.dim = self.nY + self.nL + self.nE
        self.c = np.concatenate([np.zeros(self.nY), store.C[self.gens], np.ones(self.nE)])
        self.Wg = store.W[self.gens]                      # (nL, m R), column-major windows

    # --- helpers on batches of Y, shape (B, m, N+R)
    def split(self, z):
        Y = z[: self.nY].reshape(self.m, self.N + self.R)
        return Y, z[self.nY: self.nY + self.nL], z[self.nY + self.nL:]

    def _windows(self, Yb, start, count, width):
        idx = np.arange(start, start + count)[:, None] + np.arange(width)[None, :]
        return np.moveaxis(Yb[:, :, idx], 2, 1)          # (B, count, m, width)

    def y_ineq(self, Yb):
        """Y-dependent inequalities (>= 0) and hinge arguments, batched."""
        N, R = self.N, self.R
        tb = self.tight
        W = self._windows(Yb, 1, N, R)
        L = self._windows(Yb, 0, N, R + 1)
        xs = self.model.Fx(W)
        us = self.model.Fu(L)
        lo, hi = self.model.bound_pieces(L)              # (B, N, P, n+m)
        B = Yb.shape[0]
        parts = [
            (xs - tb.X_bar.lb).reshape(B, -1), (tb.X_bar.ub - xs).reshape(B, -1),
            (us - tb.U_bar.lb).reshape(B, -1), (tb.U_bar.ub - us).reshape(B, -1),
            (lo[..., self.mask] - self.lb_inf).reshape(B, -1),
            (self.ub_inf - hi[..., self.mask]).reshape(B, -1),
        ]
        if self.model.admissible is not None:
            parts.append(self.model.admissible(Yb).reshape(B, -1))
        G = np.concatenate(parts, axis=1)
        H = np.concatenate([self.g_lo - lo[..., self.act_lo], hi[..., self.act_hi] - self.g_hi], axis=-1)
        return G, H                                       # H: (B, N, P, nA)

    def hinge_map(self, P):
        """Matrix mapping eps (N x nA) to the flattened (N, P, nA) hinge layout."""
        M = np.zeros((self.N * P * self.nA, self.nE))
        r = 0
        for k in range(self.N):
            for _ in range(P):
                for a in range(self.nA):
                    M[r, k * self.nA + a] = 1.0
                    r += 1
        return M

    def eq_y(self, Yb, x0):
        return self.model.Fx(Yb[:, :, : self.R]) - x0

    def terminal_residual(self, Y, lam):
        term = Y[:, self.N: self.N + self.R].reshape(-1, order="F")
        return term - lam @ self.Wg

    def build(self, x0) -> NlpProblem:
        shape = (self.m, self.N + self.R)
        nY, nL = self.nY, self.nL
        Y0 = np.zeros((1,) + shape)
        P = self.model.bound_pieces(self._windows(Y0, 0, 1, self.R + 1))[0].shape[-2]
        Mh = self.hinge_map(P)
        cache = {}

        def yparts(z):
            key = z[:nY].tobytes()
            if cache.get("key") != key:
                G, H = self.y_ineq(z[:nY].reshape((1,) + shape))
                cache.update(key=key, G=G[0], H=H[0].reshape(-1))
            return cache["G"], cache["H"]

        def ineq(z):
            G, H = yparts(z)
            eps = z[nY + nL:]
            return np.concatenate([G, Mh @ eps - H])

        def ineq_jac(z):
            def f(Zb):
                G, H = self.y_ineq(Zb.reshape((-1,) + shape))
                return np.concatenate([G, -H.reshape(H.shape[0], -1)], axis=1)

            JY = fd_jacobian_batched(f, z[:nY])
            nG = JY.shape[0] - Mh.shape[0]
            J = np.zeros((JY.shape[0], self.dim))
            J[:, :nY] = JY
            J[nG:, nY + nL:] = Mh
            return J

        Tsel = np.zeros((self.m * self.R, nY))
        for c in range(self.R):
            for i in range(self.m):
                Tsel[c * self.m + i, i * (self.N + self.R) + self.N + c] = 1.0

        def eq(z):
            Y, lam, _ = self.split(z)
            return np.concatenate([self.eq_y(Y[None], x0)[0], self.terminal_residual(Y, lam), [lam.sum() - 1.0]])

        def eq_jac(z):
            JY = fd_jacobian_batched(lambda Zb: self.eq_y(Zb.reshape((-1,) + shape), x0), z[:nY])
            J = np.zeros((self.n + self.m * self.R + 1, self.dim))
            J[: self.n, :nY] = JY
            J[self.n: self.n + self.m * self.R, :nY] = Tsel
            J[self.n: self.n + self.m * self.R, nY: nY + nL] = -self.Wg.T
            J[-1, nY: nY + nL] = 1.0
            return J

        lb = np.full(self.dim, -np.inf)
        lb[nY:] = 0.0
        return NlpProblem(self.dim, objective=lambda z: float(self.c @ z), gradient=lambda z: self.c,
                          eq=eq, eq_jac=eq_jac, ineq=ineq, ineq_jac=ineq_jac, lb=lb)

    def pack(self, Y, lam_full):
        lam = np.asarray(lam_full, dtype=float)[self.gens]
        _, H = self.y_ineq(Y[None])
        eps = np.max(np.maximum(H[0], 0.0), axis=1).reshape(-1) if self.nA else np.zeros(0)
        return np.concatenate([Y.reshape(-1), lam, eps])

    def violation(self, z, x0) -> float:
        Y, lam, eps = self.split(z)
        G, H = self.y_ineq(Y[None])
        v = max(float(np.max(-G, initial=0.0)),
                float(np.max(np.abs(self.eq_y(Y[None], x0)), initial=0.0)),
                float(np.max(np.abs(self.terminal_residual(Y, lam)), initial=0.0)),
                abs(float(lam.sum()) - 1.0), float(np.max(-lam, initial=0.0)))
        if self.nA:
            epsm = eps.reshape(self.N, 1, self.nA)
            v = max(v, float(np.max(H[0] - epsm, initial=0.0)))
        return v

    def solution(self, z, source) -> MpcSolution:
        Y, lam, eps = self.split(z)
        lam = np.clip(lam, 0.0, None)
        lam_full = np.zeros(self.store.size)
        lam_full[self.gens] = lam / lam.sum()
        try:
            # vertex solution of the terminal LP: sparse multipliers without round-off dust
            lam_lp, term = hull_fit(self.store, Y[:, self.N: self.N + self.R], self.gens)
            if np.max(np.abs(term - Y[:, self.N: self.N + self.R])) <= FEAS_TOL:
                lam_full = lam_lp
                Y = Y.copy()
                Y[:, self.N: self.N + self.R] = term
        except SolverFailure:
            pass
        objective = float(np.sum(eps) + lam_full @ self.store.C)
        N, R = self.N, self.R
        W = self._windows(Y[None], 0, N + 1, R)[0]
        L = self._windows(Y[None], 0, N, R + 1)[0]
        return MpcSolution(Y.copy(), lam_full, self.model.Fx(W), self.model.Fu(L), objective, source)


def local_generators(store: SafeSetStore, terminal_window, prev_lam=None, n_local: int = 40) -> np.ndarray:
    """Successors of the previously active generators plus the nearest stored windows.

    Only generators with a stored successor are returned.
    """
    q = np.asarray(terminal_window, dtype=float).reshape(-1, order="F")
    dist = np.linalg.norm(store.W - q, axis=1)
    dist[~store.has_next] = np.inf
    near = np.argsort(dist, kind="stable")[: min(n_local, int(store.has_next.sum()))]
    extra = []
    if prev_lam is not None:
        sup = np.flatnonzero(np.asarray(prev_lam) > 0)
        extra = [store.succ[g] for g in sup if store.succ[g] >= 0] + list(sup)
    gens = np.unique(np.concatenate([near, np.asarray(extra, dtype=int)]))
    # the terminal set only uses windows that have a stored successor
    return gens[store.has_next[gens]]


def shifted_candidate(store: SafeSetStore, prev: MpcSolution):
    """Previous plan shifted by one step, closed with the safe-set successor."""
    try:
        y_next, lam_next = successor(store, prev.lam)
    except ValueError:
        return None
    Y = np.column_stack([prev.Y[:, 1:], y_next])
    return Y, lam_next


def initial_candidate(store: SafeSetStore, iteration: int, N: int):
    """The stored trajectory of ``iteration`` over the first N steps, terminal at its window N."""
    R = store.model.R
    tr = next(t for t in store.trajectories if t.iteration == iteration)
    if tr.outputs.shape[1] < N + R:
        return None
    Y = tr.outputs[:, : N + R].copy()
    offset = 0
    for t in store.trajectories:
        if t is tr:
            break
        offset += t.outputs.shape[1] - R + 1
    lam = np.zeros(store.size)
    lam[offset + N] = 1.0
    return Y, lam


def solve_mpc(x_bar: np.ndarray, store: SafeSetStore, tight: TightenedConstraints, cfg: LmpcConfig,
              candidate=None, prev_lam=None) -> MpcSolution:
    """Solve the robust LMPC problem from the nominal state ``x_bar``.

    ``candidate`` = (Y, lam) is a known feasible plan (shifted previous
    solution); the solver result is accepted only if it is feasible and no
    worse, otherwise the candidate is returned.
    """
    model = store.model
    t0 = time.perf_counter()
    x_bar = np.asarray(x_bar, dtype=float)
    if candidate is not None:
        guess_term = candidate[0][:, cfg.N: cfg.N + model.R]
    else:
        guess_term = None
    if guess_term is None:
        raise InfeasibleMpc("no warm start available")
    gens = local_generators(store, guess_term, prev_lam if prev_lam is not None else candidate[1], cfg.n_local)
    gens = np.unique(np.concatenate([gens, np.flatnonzero(candidate[1] > 0)]))
    if np.any(~store.has_next[np.flatnonzero(candidate[1] > 0)]):
        raise InfeasibleMpc("warm start uses a window without successor")
    prob = MpcProblem(model, store, tight, cfg.N, gens)
    z0 = prob.pack(candidate[0], candidate[1])
    cand_ok = prob.violation(z0, x_bar) <= FEAS_TOL
    cand_cost = float(prob.c @ z0)
    nlp = prob.build(x_bar)
    best = None
    try:
        res = solve_nlp(nlp, z0, max_iter=cfg.nlp_max_iter, tol=cfg.nlp_tol, certify=False)
        if np.all(np.isfinite(res.x)) and prob.violation(res.x, x_bar) <= FEAS_TOL:
            if not cand_ok or float(prob.c @ res.x) <= cand_cost + 1e-9:
                best = prob.solution(res.x, "solver")
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.debug("mpc solver error: %s", exc)
    if best is None:
        if not cand_ok:
            raise InfeasibleMpc(f"solver failed and candidate infeasible (violation "
                                f"{prob.violation(z0, x_bar):.2e})")
        best = prob.solution(z0, "candidate")
    best.solve_ms = 1e3 * (time.perf_counter() - t0)
    return best


# ---------------------------------------------------------------------------
# iterations


def chain_outputs(store: SafeSetStore, lam, tol: float = FEAS_TOL) -> tuple:
    """Outputs generated by repeatedly shifting a hull point along the stored trajectories.

    When the multipliers reach the end of a stored trajectory, the current
    window is re-expressed with generators that have successors; the chain
    stops once that is impossible.  Returns (outputs, final multipliers).
    """
    outs = []
    lam = np.asarray(lam, dtype=float)
    with_next = np.flatnonzero(store.has_next)
    while True:
        sup = np.flatnonzero(lam > 0)
        if np.any(store.succ[sup] < 0):
            window = hull_point(store, lam)
            try:
                lam2, fit = hull_fit(store, window, with_next)
            except SolverFailure:
                return outs, lam
            if np.max(np.abs(fit - window)) > tol:
                return outs, lam
            lam = lam2
        y, lam = successor(store, lam)
        outs.append(y)


def run_iteration(j: int, model: SystemModel, x_start, store: SafeSetStore, tight: TightenedConstraints,
                  E: InvariantSet, K: ErrorPolicy, plant: Callable, rng: np.random.Generator,
                  cfg: LmpcConfig, prev_iteration: int) -> IterationRecord:
    """Closed-loop rollout of iteration ``j`` until the true state reaches the goal."""
    goal = store.goal
    x = np.asarray(x_start, dtype=float)
    x_bar = x.copy()
    cand = initial_candidate(store, prev_iteration, cfg.N)
    if cand is None:
        raise InfeasibleMpc("previous trajectory shorter than the horizon")
    xs, us, ds, xbs, ubs, Js, ms, ys = [x], [], [], [x_bar], [], [], [], []
    sol = None
    for t in range(cfg.step_cap):
        sol = solve_mpc(x_bar, store, tight, cfg, candidate=cand, prev_lam=None if sol is None else sol.lam)
        u_bar = sol.u_bar[0]
        u = apply_policy(x, x_bar, u_bar, K)
        d = np.asarray(plant(x, u, rng), dtype=float)
        ys.append(model.h(x_bar))
        x = model.f(x, u) + d
        x_bar = model.f(x_bar, u_bar)
        xs.append(x); us.append(u); ds.append(d); xbs.append(x_bar); ubs.append(u_bar)
        Js.append(sol.objective); ms.append(sol.solve_ms)
        if _dist_to_box(x, goal.X_G) < cfg.goal_tol:
            break
        cand = shifted_candidate(store, sol)
        if cand is None:
            raise InfeasibleMpc("terminal multipliers reached the end of the stored trajectories")
    else:
        raise StepCapExceeded(f"goal not reached within {cfg.step_cap} steps")
    tail = list(sol.Y[:, 1:].T) + chain_outputs(store, sol.lam)[0]
    nominal = np.column_stack(ys + tail)
    return IterationRecord(j, np.array(xs), np.array(us), np.array(ds), np.array(xbs), np.array(ubs),
                           np.array(Js), np.array(ms), nominal)


def _dist_to_box(x, box: Box) -> float:
    return float(np.linalg.norm(np.maximum(box.lb - x, 0.0) + np.maximum(x - box.ub, 0.0)))


def run_seed(model: SystemModel, outputs, x_start, K: ErrorPolicy, plant: Callable,
             rng: np.random.Generator) -> IterationRecord:
    """Iteration 0: track a given nominal output sequence with the error feedback."""
    Ys = np.asarray(outputs, dtype=float)
    R = model.R
    T = Ys.shape[1] - R
    xb = model.Fx(np.stack([Ys[:, t: t + R] for t in range(T + 1)]))
    ub = model.Fu(np.stack([Ys[:, t: t + R + 1] for t in range(T)]))
    x = np.asarray(x_start, dtype=float)
    xs, us, ds = [x], [], []
    for t in range(T):
        u = apply_policy(x, xb[t], ub[t], K)
        d = np.asarray(plant(x, u, rng), dtype=float)
        x = model.f(x, u) + d
        xs.append(x); us.append(u); ds.append(d)
    J = np.zeros(T)
    return IterationRecord(0, np.array(xs), np.array(us), np.array(ds), xb, ub, J, np.zeros(T), Ys.copy())


@dataclass
class IterationArtifacts:
    j: int
    support: SupportEstimate
    D_box: Box
    E: InvariantSet
    tight: TightenedConstraints
    L_hat: float
    gamma_hat: float


def seed_boxes(model: SystemModel, outputs):
    """Boxes covering the seed states/inputs and their informative bounding intervals."""
    Ys = np.asarray(outputs, dtype=float)
    R = model.R
    T = Ys.shape[1] - R
    xs = model.Fx(np.stack([Ys[:, t: t + R] for t in range(T + 1)]))
    L = np.stack([Ys[:, t: t + R + 1] for t in range(T)])
    us = model.Fu(L)
    lo, hi = model.bound_pieces(L)
    lo = np.min(lo, axis=-2)
    hi = np.max(hi, axis=-2)
    mask = model.informative_mask
    vals_lo = np.concatenate([xs.min(0), us.min(0)])
    vals_hi = np.concatenate([xs.max(0), us.max(0)])
    vals_lo[mask] = np.minimum(vals_lo[mask], lo.min(0)[mask])
    vals_hi[mask] = np.maximum(vals_hi[mask], hi.max(0)[mask])
    n = model.n
    return Box(vals_lo[:n], vals_hi[:n]), Box(vals_lo[n:], vals_hi[n:])


def offline_step(j: int, model: SystemModel, records, K: ErrorPolicy, X: Box, U: Box,
                 state_box: Box, input_box: Box, cfg: LmpcConfig,
                 prev: Optional[IterationArtifacts], seed_outputs=None) -> IterationArtifacts:
    """Support SDP, invariant set and tightening for iteration j."""
    data = []
    for rec in records:
        data += transitions_from_trajectory(model, rec.x, rec.u, rec.j)
    data = subsample(data, cfg.max_per_iteration)
    L_hat, g_hat = estimate_constants(data)
    qc = lipschitz_qc(cfg.qc_margin * L_hat, cfg.qc_margin * g_hat, model.n, model.m)
    try:
        sup = build_support_sdp(data, qc, X, U, prev=None if prev is None else prev.support, iteration=j)
    except (Infeasible, SolverFailure) as exc:
        if prev is None:
            raise AssumptionViolated("seed_support", f"support SDP on seed data: {exc}") from exc
        raise
    D_box = bounding_box(sup.ellipsoid)
    rpi_cfg = SampledRpiConfig(**{**cfg.rpi.__dict__, "seed": cfg.rpi.seed + j})
    E_new = sampled_rpi(model, K.K, D_box, state_box, input_box, rpi_cfg, iteration=j)
    if prev is not None:
        vrng = np.random.default_rng(cfg.seed + 1000 + j)

        def check(poly):
            return verify_invariance(model, K.K, poly, D_box, state_box, input_box,
                                     rpi_cfg.verify_samples, vrng) == 0

        E_new = nested_rpi(E_new, prev.E, K.K, check)
    X_hat, U_hat = hat_sets(X, U, E_new, state_box, input_box)
    if prev is None:
        px, pu = seed_boxes(model, seed_outputs)
        try:
            tight = solve_tightening(px, pu, X_hat, U_hat, model, cfg.grid_density, iteration=j)
        except Infeasible as exc:
            raise AssumptionViolated("seed_nominal", f"seed not inside the first feasible sets: {exc}") from exc
    else:
        tight = solve_tightening(prev.tight.X_bar, prev.tight.U_bar, X_hat, U_hat, model,
                                 cfg.grid_density, iteration=j)
    return IterationArtifacts(j, sup, D_box, E_new, tight, L_hat, g_hat)


def make_goal(X_G: Box, U_nom: Box, E: InvariantSet) -> GoalSpec:
    return GoalSpec(X_G, box_pontryagin_diff(X_G, E.rpi_box), U_nom)


def run_algorithm(model: SystemModel, seed_outputs, x_start, K: ErrorPolicy, plant: Callable,
                  X: Box, U: Box, X_G: Box, state_box: Box, input_box: Box, cfg: LmpcConfig,
                  on_iteration: Optional[Callable] = None):
    """Seed iteration followed by ``cfg.max_iters`` learning iterations.

    Returns (records, artifacts, store).  ``on_iteration(record, artifacts, store)``
    is called after every iteration (artifacts is None for the seed).
    """
    if cfg.N < model.R:
        raise ValueError(f"horizon N={cfg.N} shorter than the lifting horizon R={model.R}")
    rng = np.random.default_rng(cfg.seed)
    seed = run_seed(model, seed_outputs, x_start, K, plant, rng)
    records = [seed]
    if on_iteration is not None:
        on_iteration(seed, None, None)
    arts = []
    store = None
    prev = None
    for j in range(1, cfg.max_iters + 1):
        art = offline_step(j, model, records, K, X, U, state_box, input_box, cfg, prev, seed_outputs)
        if store is None:
            goal = make_goal(X_G, input_box, art.E)
            store = SafeSetStore(model, goal)
            errors = seed.x[: seed.x_bar.shape[0]] - seed.x_bar
            try:
                store = insert_iteration(store, seed.nominal_outputs, 0, art.tight, art.E, errors)
            except SpecViolation as exc:
                raise AssumptionViolated("seed_nominal", f"seed trajectory rejected: {exc}") from exc
            seed.iteration_cost = float(store.trajectories[-1].costs[0])
        t0 = time.perf_counter()
        rec = run_iteration(j, model, x_start, store, art.tight, art.E, K, plant, rng, cfg, j - 1)
        errors = rec.x - rec.x_bar
        store = insert_iteration(store, rec.nominal_outputs, j, art.tight, art.E, errors)
        rec.iteration_cost = float(store.trajectories[-1].costs[0])
        log.info("iteration %d: %d steps, cost %.4f, online %.1fs", j, rec.steps, rec.iteration_cost,
                 time.perf_counter() - t0)
        records.append(rec)
        arts.append(art)
        prev = art
        if on_iteration is not None:
            on_iteration(rec, art, store)
    return records, arts, store
