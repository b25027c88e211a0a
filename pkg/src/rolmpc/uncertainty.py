"""Data-driven disturbance quantification.

Quadratic constraints (QC) on the unknown dynamics, the scenario LP that
estimates a Lipschitz constant and offset from residual data, and the
S-procedure SDP that returns an ellipsoidal outer bound of the residual
support.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import cvxpy as cp
import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, Infeasible, SolverFailure
from .flat_system import SystemModel
from .geometry import Box, Ellipsoid
from .solver import CONIC_TOL, Status, solve_cvxpy, solve_lp

log = logging.getLogger(__name__)

MAX_PER_ITERATION = 50
NESTING_THETAS = (0.0, 0.05, 0.3)


@dataclass(frozen=True)
class QCMatrix:
    """Symmetric matrix acting on [1; q - q_i; z - d_i]; the QC reads v^T M v >= 0."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise DimensionMismatch("QC matrix must be square")
        if not np.allclose(M, M.T, atol=1e-12):
            raise ValueError("QC matrix must be symmetric")
        object.__setattr__(self, "matrix", M)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def value(self, dq, dz) -> np.ndarray:
        """Quadratic form at one or many (dq, dz) pairs."""
        dq = np.atleast_2d(dq)
        dz = np.atleast_2d(dz)
        v = np.hstack([np.ones((dq.shape[0], 1)), dq, dz])
        return np.einsum("ij,jk,ik->i", v, self.matrix, v)


def lipschitz_qc(L: float, gamma: float, n: int, m: int) -> list:
    """QC set for |d_i - d_j| <= L |q_i - q_j| + 2 gamma (squared and relaxed)."""
    if L < 0 or gamma < 0:
        raise ValueError("L and gamma must be nonnegative")
    M = sla.block_diag([[8.0 * gamma ** 2]], 2.0 * L ** 2 * np.eye(n + m), -np.eye(n))
    return [QCMatrix(M)]


@dataclass(frozen=True)
class TransitionDatum:
    q: np.ndarray
    d: np.ndarray
    iteration: int
    time: int

    @classmethod
    def from_transition(cls, model: SystemModel, x, u, x_next, iteration: int, time: int):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        d = np.asarray(x_next, dtype=float) - np.asarray(model.f(x, u), dtype=float)
        return cls(np.concatenate([x, u]), d, int(iteration), int(time))

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "d": self.d.tolist(), "iteration": self.iteration, "time": self.time}

    @classmethod
    def from_dict(cls, d) -> "TransitionDatum":
        return cls(np.asarray(d["q"], float), np.asarray(d["d"], float), int(d["iteration"]), int(d["time"]))


def transitions_from_trajectory(model: SystemModel, xs, us, iteration: int) -> list:
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    return [TransitionDatum.from_transition(model, xs[t], us[t], xs[t + 1], iteration, t)
            for t in range(us.shape[0])]


def subsample(data: Sequence[TransitionDatum], per_iteration: int = MAX_PER_ITERATION) -> list:
    """Evenly spaced subsample of at most ``per_iteration`` transitions per iteration."""
    out = []
    for it in sorted({d.iteration for d in data}):
        group = sorted((d for d in data if d.iteration == it), key=lambda d: d.time)
        if len(group) > per_iteration:
            idx = np.unique(np.round(np.linspace(0, len(group) - 1, per_iteration)).astype(int))
            group = [group[i] for i in idx]
        out.extend(group)
    return out


def estimate_constants(data: Sequence[TransitionDatum]):
    """Scenario LP: min L + gamma s.t. |d_i - d_j| <= L |q_i - q_j| + 2 gamma for all pairs."""
    if len(data) < 2:
        raise ValueError("need at least two transitions")
    Q = np.array([d.q for d in data])
    D = np.array([d.d for d in data])
    i, j = np.triu_indices(len(data), k=1)
    dq = np.linalg.norm(Q[i] - Q[j], axis=1)
    dd = np.linalg.norm(D[i] - D[j], axis=1)
    A_ub = -np.column_stack([dq, np.full_like(dq, 2.0)])
    res = solve_lp(np.array([1.0, 1.0]), A_ub=A_ub, b_ub=-dd, bounds=[(0, None), (0, None)])
    if res.status is not Status.OPTIMAL:
        raise SolverFailure("scenario LP failed", res.status)
    return float(res.x[0]), float(res.x[1])


@dataclass(frozen=True)
class SupportEstimate:
    ellipsoid: Ellipsoid
    lam: float
    iteration: int

    @property
    def trace(self) -> float:
        return float(np.trace(self.ellipsoid.shape))

    def to_dict(self) -> dict:
        return {"ellipsoid": self.ellipsoid.to_dict(), "lam": self.lam, "iteration": self.iteration}

    @classmethod
    def from_dict(cls, d) -> "SupportEstimate":
        return cls(Ellipsoid.from_dict(d["ellipsoid"]), float(d["lam"]), int(d["iteration"]))


def _shift(n_all: int, offset: np.ndarray) -> np.ndarray:
    """Matrix T with T [1; q; z] = [1; q - q_i; z - d_i]."""
    T = np.eye(n_all)
    T[1:, 0] = -offset
    return T


def build_support_sdp(data: Sequence[TransitionDatum], Q_set: Sequence[QCMatrix], X: Box, U: Box,
                      prev: Optional[SupportEstimate] = None, iteration: int = 1,
                      thetas=NESTING_THETAS, tol: float = CONIC_TOL) -> SupportEstimate:
    """Trace-minimal ellipsoid containing every z consistent with the QCs on X x U.

    The ellipsoid scale is fixed (lambda = 1): the LMI is homogeneous in all
    decision variables, so a free scale would drive the trace to zero.
    With ``prev`` the new ellipsoid is forced inside the previous one through
    the sufficient condition S <= (1-theta)^2 S_prev, |S_prev^{-1/2}(c - c_prev)| <= theta,
    solved for each theta in ``thetas``; the best candidate is kept and the
    previous estimate is returned if no candidate improves on it.
    """
    if not data:
        raise ValueError("no data")
    n = X.dim
    m = U.dim
    nq = n + m
    N = 1 + nq + n
    for Qm in Q_set:
        if Qm.size != N:
            raise DimensionMismatch(f"QC matrices must be {N}x{N}")
    Ms = []
    for dat in data:
        T = _shift(N, np.concatenate([dat.q, dat.d]))
        for Qm in Q_set:
            Ms.append(T.T @ Qm.matrix @ T)
    Ms = np.array(Ms)

    candidates = []
    theta_list = [None] if prev is None else list(thetas)
    for theta in theta_list:
        est = _solve_one(Ms, X, U, n, m, prev, theta, tol)
        if est is not None:
            candidates.append(est)
    if not candidates:
        if prev is None:
            raise Infeasible("support SDP infeasible on the supplied data")
        log.info("support SDP: no nested candidate, keeping previous estimate")
        return SupportEstimate(prev.ellipsoid, prev.lam, iteration)
    S, c = min(candidates, key=lambda sc: np.trace(sc[0]))
    if prev is not None and np.trace(S) > prev.trace:
        return SupportEstimate(prev.ellipsoid, prev.lam, iteration)
    S = 0.5 * (S + S.T)
    return SupportEstimate(Ellipsoid(c, S), 1.0, iteration)


def _solve_one(Ms, X, U, n, m, prev, theta, tol):
    nq = n + m
    N = 1 + nq + n
    S = cp.Variable((n, n), symmetric=True)
    c = cp.Variable(n)
    tau = cp.Variable(Ms.shape[0], nonneg=True)
    Bx = cp.Variable((n, n), symmetric=True)
    Bu = cp.Variable((m, m), symmetric=True)

    def embed(box, Bs, start):
        k = box.dim
        corner = -(box.lb @ Bs @ box.ub)
        cross = 0.5 * (Bs @ (box.lb + box.ub))
        E0 = np.zeros((N, 1))
        E0[0, 0] = 1.0
        Ei = np.zeros((N, k))
        Ei[start: start + k, :] = np.eye(k)
        cross_col = cp.reshape(cross, (k, 1), order="C")
        return (corner * (E0 @ E0.T) + E0 @ cross_col.T @ Ei.T + Ei @ cross_col @ E0.T
                - Ei @ Bs @ Ei.T)

    e1 = np.zeros((N, N))
    e1[0, 0] = 1.0
    Mx = embed(X, Bx, 1)
    Mu = embed(U, Bu, 1 + n)
    qc_sum = cp.reshape(Ms.reshape(Ms.shape[0], N * N).T @ tau, (N, N), order="C")
    M11 = e1 - Mx - Mu - qc_sum
    G = cp.vstack([cp.reshape(-c, (1, n), order="C"), np.zeros((nq, n)), np.eye(n)])
    big = cp.bmat([[M11, G], [G.T, S]])
    cons = [0.5 * (big + big.T) >> 0, Bx >= 0, Bu >= 0]
    if prev is not None:
        Sp = prev.ellipsoid.shape
        cp_ = prev.ellipsoid.center
        cons.append((1 - theta) ** 2 * Sp - S >> 0)
        Linv = np.linalg.inv(np.linalg.cholesky(Sp))
        cons.append(cp.norm(Linv @ (c - cp_)) <= theta)
    prob = cp.Problem(cp.Minimize(cp.trace(S)), cons)
    status = solve_cvxpy(prob, tol)
    if status is not Status.OPTIMAL or S.value is None:
        log.debug("support SDP (theta=%s) status %s", theta, status)
        return None
    Sv = 0.5 * (S.value + S.value.T)
    if np.min(np.linalg.eigvalsh(Sv)) <= 1e-12:
        return None
    return Sv, np.asarray(c.value)
