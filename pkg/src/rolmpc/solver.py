"""Numerical backends: a small conic interface and a dense SQP front end.

LPs go to HiGHS through :func:`scipy.optimize.linprog`; problems with
second-order or PSD cones go through cvxpy (Clarabel first, SCS as a
fallback). Nonlinear programs are solved by SLSQP with a feasibility
restoration pass and a post-hoc KKT certificate.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import cvxpy as cp
import numpy as np
from scipy.optimize import linprog, lsq_linear, minimize

log = logging.getLogger(__name__)

CONIC_TOL = 1e-8
NLP_TOL = 1e-6


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


class NlpStatus(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"
    DEGENERATE = "degenerate"
    NUMERICAL_FAILURE = "numerical_failure"


# ---------------------------------------------------------------------------
# conic problems


@dataclass(frozen=True)
class ConeBlock:
    """Constraint ``A @ x + b`` in a cone.

    kind is one of ``zero`` (equality), ``nonneg``, ``soc`` (first row is the
    norm bound) or ``psd`` (rows are a row-major k*k matrix).
    """

    kind: str
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.kind not in ("zero", "nonneg", "soc", "psd"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError("cone block rows of A and b differ")
        if self.kind == "psd":
            k = int(round(np.sqrt(b.shape[0])))
            if k * k != b.shape[0]:
                raise ValueError("psd block needs k*k rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def rows(self) -> int:
        return self.b.shape[0]


@dataclass(frozen=True)
class ConicProblem:
    """minimize ``c @ x`` subject to every cone block."""

    c: np.ndarray
    cones: tuple

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "cones", tuple(self.cones))
        for blk in self.cones:
            if blk.A.shape[1] != c.shape[0]:
                raise ValueError("cone block column count differs from variable count")

    @property
    def variables(self) -> int:
        return self.c.shape[0]

    @property
    def is_lp(self) -> bool:
        return all(blk.kind in ("zero", "nonneg") for blk in self.cones)


@dataclass
class ConicResult:
    status: Status
    x: Optional[np.ndarray]
    value: float
    duals: list = field(default_factory=list)


@dataclass
class LpResult:
    status: Status
    x: Optional[np.ndarray]
    value: float
    eq_duals: Optional[np.ndarray] = None
    ub_duals: Optional[np.ndarray] = None


_HIGHS_STATUS = {0: Status.OPTIMAL, 2: Status.INFEASIBLE, 3: Status.UNBOUNDED}


def solve_lp(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, bounds=(None, None)) -> LpResult:
    """Thin HiGHS wrapper returning a :class:`LpResult`.

    ``ub_duals`` are reported nonnegative (the multiplier of ``A_ub x <= b_ub``).
    """
    kw = dict(A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    res = linprog(c, options={"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9}, **kw)
    if res.status == 4:
        # tight tolerances occasionally stall HiGHS on badly scaled hulls
        res = linprog(c, **kw)
    status = _HIGHS_STATUS.get(res.status, Status.NUMERICAL_FAILURE)
    if status is not Status.OPTIMAL:
        return LpResult(status, None, np.inf if status is Status.INFEASIBLE else -np.inf)
    eq_duals = None if A_eq is None else np.asarray(res.eqlin.marginals)
    ub_duals = None if A_ub is None else -np.asarray(res.ineqlin.marginals)
    return LpResult(status, np.asarray(res.x), float(res.fun), eq_duals, ub_duals)


def _solve_conic_lp(p: ConicProblem) -> ConicResult:
    eq = [blk for blk in p.cones if blk.kind == "zero"]
    ineq = [blk for blk in p.cones if blk.kind == "nonneg"]
    A_eq = np.vstack([blk.A for blk in eq]) if eq else None
    b_eq = -np.concatenate([blk.b for blk in eq]) if eq else None
    A_ub = -np.vstack([blk.A for blk in ineq]) if ineq else None
    b_ub = np.concatenate([blk.b for blk in ineq]) if ineq else None
    res = solve_lp(p.c, A_eq, b_eq, A_ub, b_ub, bounds=(None, None))
    if res.status is not Status.OPTIMAL:
        return ConicResult(res.status, None, res.value)
    duals = []
    ie = ii = 0
    for blk in p.cones:
        if blk.kind == "zero":
            duals.append(res.eq_duals[ie: ie + blk.rows])
            ie += blk.rows
        else:
            duals.append(res.ub_duals[ii: ii + blk.rows])
            ii += blk.rows
    return ConicResult(Status.OPTIMAL, res.x, res.value, duals)


def solve_cvxpy(problem: cp.Problem, tol: float = CONIC_TOL) -> Status:
    """Solve a cvxpy problem with Clarabel, retrying with SCS on failure."""
    attempts = (
        ("CLARABEL", dict(tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol)),
        ("SCS", dict(eps_abs=max(tol, 1e-9), eps_rel=max(tol, 1e-9), max_iters=200000)),
    )
    for solver, opts in attempts:
        try:
            with warnings.catch_warnings():
                # inaccurate solutions are classified below instead
                warnings.simplefilter("ignore", UserWarning)
                problem.solve(solver=solver, **opts)
        except cp.error.SolverError as exc:
            log.debug("%s failed: %s", solver, exc)
            continue
        if problem.status == cp.OPTIMAL:
            return Status.OPTIMAL
        if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return Status.INFEASIBLE
        if problem.status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return Status.UNBOUNDED
        if problem.status == cp.OPTIMAL_INACCURATE and solver == attempts[-1][0]:
            return Status.OPTIMAL
    return Status.NUMERICAL_FAILURE


def solve_conic(p: ConicProblem, tol: float = CONIC_TOL) -> ConicResult:
    """Solve a conic problem; status is reported, never raised."""
    if p.is_lp:
        return _solve_conic_lp(p)
    x = cp.Variable(p.variables)
    constraints = []
    for blk in p.cones:
        expr = blk.A @ x + blk.b
        if blk.kind == "zero":
            constraints.append(expr == 0)
        elif blk.kind == "nonneg":
            constraints.append(expr >= 0)
        elif blk.kind == "soc":
            constraints.append(cp.SOC(expr[0], expr[1:]))
        else:
            k = int(round(np.sqrt(blk.rows)))
            mat = cp.reshape(expr, (k, k), order="C")
            constraints.append(0.5 * (mat + mat.T) >> 0)
    prob = cp.Problem(cp.Minimize(p.c @ x), constraints)
    status = solve_cvxpy(prob, tol)
    if status is not Status.OPTIMAL:
        return ConicResult(status, None, np.nan)
    duals = [np.asarray(con.dual_value) for con in constraints]
    return ConicResult(status, np.asarray(x.value), float(prob.value), duals)


# ---------------------------------------------------------------------------
# nonlinear programs


def fd_gradient(fun: Callable, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


def fd_jacobian(fun: Callable, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function, shape (m, n)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * step))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def fd_jacobian_batched(fun: Callable, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a function accepting a (k, n) batch of points."""
    x = np.asarray(x, dtype=float)
    E = step * np.eye(x.size)
    vals = np.asarray(fun(np.vstack([x + E, x - E])), dtype=float).reshape(2 * x.size, -1)
    return ((vals[: x.size] - vals[x.size:]) / (2 * step)).T


@dataclass
class NlpProblem:
    """minimize objective(x) s.t. eq(x) == 0, ineq(x) >= 0, lb <= x <= ub.

    Derivative callables are optional; missing ones fall back to central
    differences with step ``fd_step``.
    """

    dim: int
    objective: Callable[[np.ndarray], float]
    gradient: Optional[Callable] = None
    eq: Optional[Callable] = None
    eq_jac: Optional[Callable] = None
    ineq: Optional[Callable] = None
    ineq_jac: Optional[Callable] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    fd_step: float = 1e-6

    def grad(self, x):
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float)
        return fd_gradient(self.objective, x, self.fd_step)

    def jac_eq(self, x):
        if self.eq_jac is not None:
            return np.atleast_2d(np.asarray(self.eq_jac(x), dtype=float))
        return fd_jacobian(self.eq, x, self.fd_step)

    def jac_ineq(self, x):
        if self.ineq_jac is not None:
            return np.atleast_2d(np.asarray(self.ineq_jac(x), dtype=float))
        return fd_jacobian(self.ineq, x, self.fd_step)

    def violation(self, x) -> float:
        v = 0.0
        if self.eq is not None:
            h = np.atleast_1d(self.eq(x))
            if h.size:
                v = max(v, float(np.max(np.abs(h))))
        if self.ineq is not None:
            g = np.atleast_1d(self.ineq(x))
            if g.size:
                v = max(v, float(np.max(np.maximum(-g, 0.0))))
        if self.lb is not None:
            v = max(v, float(np.max(np.maximum(self.lb - x, 0.0), initial=0.0)))
        if self.ub is not None:
            v = max(v, float(np.max(np.maximum(x - self.ub, 0.0), initial=0.0)))
        return v


@dataclass
class NlpResult:
    status: NlpStatus
    x: np.ndarray
    objective: float
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    kkt_residual: float
    violation: float
    iterations: int


def kkt_certificate(p: NlpProblem, x: np.ndarray, active_tol: float = 1e-6):
    """Least-squares multiplier estimate and the resulting stationarity residual.

    Returns (eq multipliers, ineq multipliers, residual). The residual is the
    infinity norm of the Lagrangian gradient scaled by max(1, |grad f|).
    """
    g0 = p.grad(x)
    blocks = []
    n_eq = 0
    if p.eq is not None:
        J = p.jac_eq(x)
        if J.size:
            blocks.append(J)
            n_eq = J.shape[0]
    g_ineq = np.atleast_1d(p.ineq(x)) if p.ineq is not None else np.zeros(0)
    J_in = p.jac_ineq(x) if (p.ineq is not None and g_ineq.size) else np.zeros((0, x.size))
    act = np.flatnonzero(g_ineq <= active_tol)
    if act.size:
        blocks.append(J_in[act])
    bound_rows = []
    if p.lb is not None:
        for i in np.flatnonzero(x - p.lb <= active_tol):
            row = np.zeros(x.size)
            row[i] = 1.0
            bound_rows.append(row)
    if p.ub is not None:
        for i in np.flatnonzero(p.ub - x <= active_tol):
            row = np.zeros(x.size)
            row[i] = -1.0
            bound_rows.append(row)
    if bound_rows:
        blocks.append(np.vstack(bound_rows))
    mu_in = np.zeros(g_ineq.size)
    if not blocks:
        res = float(np.max(np.abs(g0), initial=0.0))
        return np.zeros(0), mu_in, res / max(1.0, res)
    J_all = np.vstack(blocks)
    lo = np.concatenate([np.full(n_eq, -np.inf), np.zeros(J_all.shape[0] - n_eq)])
    hi = np.full(J_all.shape[0], np.inf)
    sol = lsq_linear(J_all.T, g0, bounds=(lo, hi), method="bvls", tol=1e-12)
    r = J_all.T @ sol.x - g0
    mu_eq = sol.x[:n_eq]
    mu_in[act] = sol.x[n_eq: n_eq + act.size]
    scale = max(1.0, float(np.max(np.abs(g0), initial=0.0)))
    return mu_eq, mu_in, float(np.max(np.abs(r), initial=0.0)) / scale


def _slsqp(p: NlpProblem, x0, max_iter, ftol):
    cons = []
    if p.eq is not None:
        cons.append({"type": "eq", "fun": p.eq, "jac": p.jac_eq})
    if p.ineq is not None:
        cons.append({"type": "ineq", "fun": p.ineq, "jac": p.jac_ineq})
    bounds = None
    if p.lb is not None or p.ub is not None:
        lb = p.lb if p.lb is not None else np.full(p.dim, -np.inf)
        ub = p.ub if p.ub is not None else np.full(p.dim, np.inf)
        bounds = list(zip(lb, ub))
    return minimize(
        p.objective,
        x0,
        jac=p.grad,
        method="SLSQP",
        constraints=cons,
        bounds=bounds,
        options={"maxiter": max_iter, "ftol": ftol},
    )


def _restore(p: NlpProblem, x0, max_iter):
    """Minimise squared constraint violation inside the bounds."""

    def phi(x):
        v = 0.0
        if p.eq is not None:
            v += float(np.sum(np.atleast_1d(p.eq(x)) ** 2))
        if p.ineq is not None:
            v += float(np.sum(np.minimum(np.atleast_1d(p.ineq(x)), 0.0) ** 2))
        return v

    def dphi(x):
        g = np.zeros(p.dim)
        if p.eq is not None:
            h = np.atleast_1d(p.eq(x))
            if h.size:
                g += 2 * p.jac_eq(x).T @ h
        if p.ineq is not None:
            gi = np.minimum(np.atleast_1d(p.ineq(x)), 0.0)
            if gi.size:
                g += 2 * p.jac_ineq(x).T @ gi
        return g

    restoration = NlpProblem(p.dim, phi, dphi, lb=p.lb, ub=p.ub)
    return _slsqp(restoration, x0, max_iter, 1e-16).x


def solve_nlp(p: NlpProblem, x0, max_iter: int = 200, tol: float = NLP_TOL,
              certify: bool = True) -> NlpResult:
    """SQP solve with one feasibility-restoration retry.

    Converged means SLSQP terminated, the constraint violation is below
    ``tol / 10`` and (when ``certify``) the KKT residual below ``tol``.
    Skipping the certificate saves a bounded least-squares solve per call.
    """
    x0 = np.asarray(x0, dtype=float).copy()
    if x0.shape != (p.dim,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a finite vector of length dim")
    viol_tol = tol / 10
    res = _slsqp(p, x0, max_iter, ftol=tol * 1e-4)
    iters = int(res.nit)
    x = np.asarray(res.x, dtype=float)
    if p.violation(x) > viol_tol:
        xr = _restore(p, x if np.all(np.isfinite(x)) else x0, max_iter)
        if p.violation(xr) > viol_tol:
            return _result(p, NlpStatus.INFEASIBLE, xr, iters)
        res = _slsqp(p, xr, max_iter, ftol=tol * 1e-4)
        iters += int(res.nit)
        x = np.asarray(res.x, dtype=float)
        if p.violation(x) > viol_tol:
            return _result(p, NlpStatus.INFEASIBLE, xr, iters)
    if res.status == 9:
        return _result(p, NlpStatus.MAX_ITERATIONS, x, iters, certify)
    if not certify:
        status = NlpStatus.CONVERGED if res.status == 0 else NlpStatus.NUMERICAL_FAILURE
        return _result(p, status, x, iters, False)
    out = _result(p, NlpStatus.CONVERGED, x, iters)
    if out.kkt_residual > tol:
        # one polishing pass from the returned point
        res2 = _slsqp(p, x, max_iter, ftol=tol * 1e-6)
        x2 = np.asarray(res2.x, dtype=float)
        if p.violation(x2) <= viol_tol:
            out2 = _result(p, NlpStatus.CONVERGED, x2, iters + int(res2.nit))
            if out2.kkt_residual <= out.kkt_residual:
                out = out2
        if out.kkt_residual > tol:
            out.status = NlpStatus.DEGENERATE if res.status == 0 else NlpStatus.NUMERICAL_FAILURE
    return out


def _result(p, status, x, iters, certify=True):
    if not certify:
        return NlpResult(status, x, float(p.objective(x)), np.zeros(0), np.zeros(0),
                         np.nan, p.violation(x), iters)
    mu_eq, mu_in, kkt = kkt_certificate(p, x)
    return NlpResult(status, x, float(p.objective(x)), mu_eq, mu_in, kkt, p.violation(x), iters)
