"""Error feedback gain and robust positive invariant sets for the tracking error.

Two constructions are provided:

* :func:`compute_rpi` - the linear recipe: truncated Minkowski series of
  ``(A+BK)^i D`` with a multiplicative (or additive, for flat disturbance
  sets) tail bound.
* :func:`sampled_rpi` - a forward-reachable iteration on the exact nonlinear
  error map ``e+ = f(xb+e, ub+Ke) - f(xb, ub) + d`` over a nominal operating
  box, followed by inflation and an independent sampled certificate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, EmptyResult, NotContractive, RiccatiDivergence
from .flat_system import SystemModel
from .geometry import (
    Box,
    Ellipsoid,
    VPolytope,
    bounding_box,
    contains_many,
    intersect_vpoly,
    minkowski_sum_many,
    reduce_vertices,
)
from .solver import Status, fd_jacobian, solve_lp

log = logging.getLogger(__name__)

FD_STEP = 1e-6
RICCATI_TOL = 1e-10
RICCATI_MAX = 10_000


@dataclass(frozen=True)
class ErrorPolicy:
    K: np.ndarray

    def __call__(self, e):
        return np.asarray(e, dtype=float) @ self.K.T


@dataclass(frozen=True)
class InvariantSet:
    rpi: VPolytope
    rpi_box: Box
    input_image_box: Box
    iteration: int = 0

    @classmethod
    def from_polytope(cls, rpi: VPolytope, K, iteration: int = 0) -> "InvariantSet":
        K = np.atleast_2d(K)
        return cls(rpi, bounding_box(rpi), bounding_box(rpi.linear_image(K)), iteration)

    def contains(self, e, tol: float = 1e-6) -> np.ndarray:
        """Membership of one or many error vectors."""
        e = np.atleast_2d(np.asarray(e, dtype=float))
        if not np.any(np.ptp(self.rpi.vertices, axis=0) > 0):
            return np.all(np.abs(e - self.rpi.vertices[0]) <= tol, axis=1)
        return contains_many(self.rpi, e, tol)

    def to_dict(self) -> dict:
        return {"rpi": self.rpi.to_dict(), "rpi_box": self.rpi_box.to_dict(),
                "input_image_box": self.input_image_box.to_dict(), "iteration": self.iteration}

    @classmethod
    def from_dict(cls, d) -> "InvariantSet":
        return cls(VPolytope.from_dict(d["rpi"]), Box.from_dict(d["rpi_box"]),
                   Box.from_dict(d["input_image_box"]), int(d["iteration"]))


def dlqr(A, B, Q, R):
    """Discrete LQR by fixed-point Riccati iteration; returns (K, P) with u = K x."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    P = Q.copy()
    for _ in range(RICCATI_MAX):
        BtP = B.T @ P
        G = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_new = Q + A.T @ P @ A - A.T @ P @ B @ G
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            break
        if np.max(np.abs(P_new - P)) < RICCATI_TOL * max(1.0, np.max(np.abs(P_new))):
            P = P_new
            K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return K, P
        P = P_new
    raise RiccatiDivergence("Riccati recursion did not reach a fixed point")


def linearize(model: SystemModel, x_ref, u_ref, step: float = FD_STEP):
    x_ref = np.asarray(x_ref, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    A = fd_jacobian(lambda x: model.f(x, u_ref), x_ref, step)
    B = fd_jacobian(lambda u: model.f(x_ref, u), u_ref, step)
    return A, B


def linearize_and_gain(model: SystemModel, x_ref, u_ref, Q_lqr, R_lqr):
    A, B = linearize(model, x_ref, u_ref)
    K, _ = dlqr(A, B, Q_lqr, R_lqr)
    return A, B, ErrorPolicy(K)


def _gauge(V: np.ndarray, x: np.ndarray) -> float:
    """Minkowski gauge of x w.r.t. conv(V) (V contains the origin): min t, x in t conv(V)."""
    k, n = V.shape
    c = np.zeros(k)
    c[:] = 1.0  # minimise sum(lambda) with x = V^T lambda, lambda >= 0
    res = solve_lp(c, A_eq=V.T, b_eq=x, bounds=[(0, None)] * k)
    if res.status is not Status.OPTIMAL:
        return np.inf
    return res.value


def compute_rpi(A, B, K, D_bar: VPolytope, horizon_cap: int = 50, eps_target: float = 1e-9,
                iteration: int = 0) -> InvariantSet:
    """Outer RPI approximation for e+ = (A+BK) e + d, d in D_bar."""
    A, B, K = np.atleast_2d(A), np.atleast_2d(B), np.atleast_2d(K)
    Phi = A + B @ K
    n = Phi.shape[0]
    if D_bar.dim != n:
        raise DimensionMismatch("disturbance dimension differs from state dimension")
    rho = float(np.max(np.abs(np.linalg.eigvals(Phi))))
    if rho >= 1.0:
        raise NotContractive(f"spectral radius {rho:.4f} >= 1")
    V = reduce_vertices(D_bar.vertices)
    if np.all(np.abs(V) < 1e-15):
        zero = VPolytope(np.zeros((1, n)))
        return InvariantSet.from_polytope(zero, K, iteration)
    terms = [VPolytope(V)]
    Pk = np.eye(n)
    # multiplicative tail needs the origin in the interior of D_bar
    full_dim = all(np.isfinite(_gauge(V, s * np.eye(n)[i])) for i in range(n) for s in (1, -1))
    eps = np.inf
    for k in range(1, horizon_cap + 1):
        Pk = Phi @ Pk
        img = V @ Pk.T
        if full_dim:
            eps = max(_gauge(V, v) for v in img)
        else:
            eps = np.inf
        if eps <= eps_target or k == horizon_cap:
            break
        terms.append(VPolytope(img))
    total = minkowski_sum_many(terms)
    if full_dim and eps < 1.0:
        rpi = total.scaled(1.0 / (1.0 - eps))
    else:
        # additive box tail: sum_{i >= k} |Phi^i|_inf |D|_inf
        norm_k = np.linalg.norm(Pk, ord=np.inf)
        if norm_k >= 1.0:
            raise NotContractive("tail bound not contractive within horizon_cap")
        dmax = float(np.max(np.abs(V)))
        r = dmax * norm_k / (1.0 - norm_k)
        tail = VPolytope.from_box(Box.symmetric(np.full(n, r)))
        rpi = minkowski_sum_many([total, tail])
    return InvariantSet.from_polytope(rpi, K, iteration)


def combined_disturbance(D_hat: Ellipsoid, W_lin: Box) -> VPolytope:
    """Box(D_hat) plus the symmetrised linearisation-error box W + (-W)."""
    if D_hat.dim != W_lin.dim:
        raise DimensionMismatch("dims differ")
    return VPolytope.from_box(bounding_box(D_hat) + W_lin + (-W_lin))


def error_step(model: SystemModel, K, e, x_bar, u_bar, d):
    """Exact nonlinear error update (batched)."""
    K = np.atleast_2d(K)
    e = np.asarray(e, dtype=float)
    u_bar = np.asarray(u_bar, dtype=float)
    x_bar = np.asarray(x_bar, dtype=float)
    return model.f(x_bar + e, u_bar + e @ K.T) - model.f(x_bar, u_bar) + d


@dataclass
class SampledRpiConfig:
    nominal_per_point: int = 24
    interior_points: int = 64
    max_iter: int = 300
    patience: int = 15
    growth_tol: float = 1e-3
    inflation: float = 0.1
    verify_samples: int = 20_000
    max_inflation_rounds: int = 6
    seed: int = 0


def _images(model, K, pts, D_vertices, state_box, input_box, rng, per_point):
    k = pts.shape[0]
    xb = state_box.sample(rng, k * per_point)
    ub = input_box.sample(rng, k * per_point)
    e = np.repeat(pts, per_point, axis=0)
    base = error_step(model, K, e, xb, ub, 0.0)
    # every disturbance vertex is added to every nominal image
    return (base[:, None, :] + D_vertices[None, :, :]).reshape(-1, pts.shape[1])


def verify_invariance(model: SystemModel, K, rpi: VPolytope, D_box: Box, state_box: Box,
                      input_box: Box, samples: int, rng: np.random.Generator,
                      tol: float = 1e-6) -> int:
    """Count sampled one-step escapes; a third of the errors are drawn on vertices."""
    V = rpi.vertices
    k_v = samples // 3
    e = np.vstack([V[rng.integers(0, V.shape[0], size=k_v)], rpi.sample(rng, samples - k_v)])
    xb = state_box.sample(rng, samples)
    ub = input_box.sample(rng, samples)
    Dv = D_box.vertices()
    d = np.where(rng.random((samples, 1)) < 0.5, Dv[rng.integers(0, Dv.shape[0], size=samples)],
                 D_box.sample(rng, samples))
    nxt = error_step(model, K, e, xb, ub, d)
    return int(np.sum(~contains_many(rpi, nxt, tol)))


def sampled_rpi(model: SystemModel, K, D_box: Box, state_box: Box, input_box: Box,
                cfg: Optional[SampledRpiConfig] = None, init: Optional[VPolytope] = None,
                iteration: int = 0) -> InvariantSet:
    """Sampled forward-reachable RPI of the exact error dynamics over a nominal box."""
    cfg = cfg or SampledRpiConfig()
    rng = np.random.default_rng(cfg.seed)
    K = np.atleast_2d(K)
    n = model.n
    Dv = D_box.vertices()
    V = init.vertices if init is not None else Dv.copy()
    V = reduce_vertices(np.vstack([V, np.zeros((1, n))]))
    widths = [np.ptp(V, axis=0)]
    for it in range(cfg.max_iter):
        interior = VPolytope(V).sample(rng, cfg.interior_points)
        pts = np.vstack([V, interior])
        imgs = _images(model, K, pts, Dv, state_box, input_box, rng, cfg.nominal_per_point)
        V = reduce_vertices(np.vstack([V, imgs]))
        widths.append(np.ptp(V, axis=0))
        if not np.all(np.isfinite(V)) or np.any(widths[-1] > 1e3):
            raise NotContractive("sampled reachable set diverged")
        if len(widths) > cfg.patience:
            old = widths[-1 - cfg.patience]
            if np.all(widths[-1] <= old * (1 + cfg.growth_tol) + 1e-12):
                break
    log.debug("sampled rpi stopped after %d iterations, widths %s", it + 1, widths[-1])
    eta = cfg.inflation
    vrng = np.random.default_rng(cfg.seed + 1)
    for _ in range(cfg.max_inflation_rounds):
        cand = VPolytope((1.0 + eta) * V)
        bad = verify_invariance(model, K, cand, D_box, state_box, input_box,
                                cfg.verify_samples, vrng)
        if bad == 0:
            return InvariantSet.from_polytope(cand, K, iteration)
        eta *= 2.0
    raise NotContractive("sampled invariance certificate failed after inflation")


def nested_rpi(new: InvariantSet, prev: Optional[InvariantSet], K, check: Callable[[VPolytope], bool]):
    """Return an invariant set inside ``prev``.

    Both sets are invariant for the newer (smaller) disturbance set, so their
    intersection is as well; ``check`` re-certifies it.  Falls back to ``prev``.
    """
    if prev is None:
        return new
    if np.all(contains_many(prev.rpi, new.rpi.vertices, 1e-12)):
        return new
    try:
        inter = intersect_vpoly(new.rpi, prev.rpi)
    except EmptyResult:
        inter = None
    if inter is not None and check(inter):
        return InvariantSet.from_polytope(inter, K, new.iteration)
    return InvariantSet(prev.rpi, prev.rpi_box, prev.input_image_box, new.iteration)
