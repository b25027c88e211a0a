"""Convex-set primitives: boxes, ellipsoids and vertex polytopes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial import ConvexHull, QhullError

from .errors import DimensionMismatch, EmptyResult, SolverFailure
from .solver import Status, solve_lp

INCLUSION_TOL = 1e-7
PRUNE_EVERY = 5


def _vec(a) -> np.ndarray:
    return np.atleast_1d(np.asarray(a, dtype=float)).reshape(-1)


@dataclass(frozen=True)
class Box:
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb, ub = _vec(self.lb), _vec(self.ub)
        if lb.shape != ub.shape:
            raise DimensionMismatch("lb and ub lengths differ")
        if np.any(lb > ub):
            raise EmptyResult(f"box with lb > ub: {lb} > {ub}")
        lb.flags.writeable = False
        ub.flags.writeable = False
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def dim(self) -> int:
        return self.lb.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lb + self.ub)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.ub - self.lb)

    @classmethod
    def symmetric(cls, half_width) -> "Box":
        h = _vec(half_width)
        return cls(-h, h)

    def contains(self, x, tol: float = INCLUSION_TOL) -> bool:
        x = _vec(x)
        return bool(np.all(x >= self.lb - tol) and np.all(x <= self.ub + tol))

    def contains_box(self, other: "Box", tol: float = INCLUSION_TOL) -> bool:
        return bool(np.all(other.lb >= self.lb - tol) and np.all(other.ub <= self.ub + tol))

    def vertices(self) -> np.ndarray:
        grids = np.meshgrid(*[[lo, hi] for lo, hi in zip(self.lb, self.ub)], indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        return self.lb + (self.ub - self.lb) * rng.random((k, self.dim))

    def intersect(self, other: "Box") -> "Box":
        return Box(np.maximum(self.lb, other.lb), np.minimum(self.ub, other.ub))

    def __add__(self, other: "Box") -> "Box":
        if self.dim != other.dim:
            raise DimensionMismatch("box dims differ")
        return Box(self.lb + other.lb, self.ub + other.ub)

    def __neg__(self) -> "Box":
        return Box(-self.ub, -self.lb)

    def to_dict(self) -> dict:
        return {"lb": self.lb.tolist(), "ub": self.ub.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Box":
        return cls(d["lb"], d["ub"])


@dataclass(frozen=True)
class Ellipsoid:
    """{d : (d - center)^T shape^{-1} (d - center) <= 1}."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = _vec(self.center)
        S = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if S.shape != (c.size, c.size):
            raise DimensionMismatch("shape must be square with the center's dimension")
        if not np.allclose(S, S.T, atol=1e-9 * max(1.0, np.abs(S).max())):
            raise ValueError("shape matrix is not symmetric")
        S = 0.5 * (S + S.T)
        if np.min(np.linalg.eigvalsh(S)) <= 1e-9:
            raise ValueError("shape matrix is not positive definite")
        c.flags.writeable = False
        S.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", S)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def level(self, d) -> np.ndarray:
        """Quadratic form value (<= 1 inside); accepts one point or a (k, n) array."""
        d = np.asarray(d, dtype=float)
        single = d.ndim == 1
        D = np.atleast_2d(d) - self.center
        fac = cho_factor(self.shape, lower=True)
        vals = np.einsum("ij,ji->i", D, cho_solve(fac, D.T))
        return vals[0] if single else vals

    def contains(self, d, tol: float = INCLUSION_TOL) -> bool:
        return bool(np.all(self.level(d) <= 1 + tol))

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        """Uniform samples from the solid ellipsoid."""
        n = self.dim
        g = rng.standard_normal((k, n))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = rng.random(k) ** (1.0 / n)
        Lc = np.linalg.cholesky(self.shape)
        return self.center + (g * r[:, None]) @ Lc.T

    def boundary(self, rng: np.random.Generator, k: int) -> np.ndarray:
        g = rng.standard_normal((k, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return self.center + g @ np.linalg.cholesky(self.shape).T

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "shape": self.shape.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Ellipsoid":
        return cls(d["center"], d["shape"])


@dataclass(frozen=True)
class VPolytope:
    """Convex hull of a finite vertex list (rows of ``vertices``)."""

    vertices: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        if V.ndim == 1:
            V = V.reshape(-1, 1)
        if V.shape[0] == 0:
            raise EmptyResult("polytope needs at least one vertex")
        V.flags.writeable = False
        object.__setattr__(self, "vertices", V)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @classmethod
    def from_box(cls, b: Box) -> "VPolytope":
        return cls(b.vertices())

    def linear_image(self, M) -> "VPolytope":
        return VPolytope(self.vertices @ np.atleast_2d(M).T)

    def scaled(self, a: float) -> "VPolytope":
        return VPolytope(a * self.vertices)

    def contains(self, x, tol: float = INCLUSION_TOL) -> bool:
        return convex_hull_membership(self.vertices, x, tol=tol)[0]

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        """Random convex combinations of the vertices (Dirichlet weights)."""
        w = rng.dirichlet(np.ones(self.vertices.shape[0]), size=k)
        return w @ self.vertices

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist()}

    @classmethod
    def from_dict(cls, d) -> "VPolytope":
        return cls(np.asarray(d["vertices"], dtype=float))


def box_pontryagin_diff(a: Box, b: Box) -> Box:
    """{x : x + b subset of a} for boxes; raises EmptyResult if empty."""
    if a.dim != b.dim:
        raise DimensionMismatch("box dims differ")
    return Box(a.lb - b.lb, a.ub - b.ub)


def bounding_box(s: Union[Ellipsoid, VPolytope, Box]) -> Box:
    if isinstance(s, Box):
        return s
    if isinstance(s, Ellipsoid):
        h = np.sqrt(np.diag(s.shape))
        return Box(s.center - h, s.center + h)
    if isinstance(s, VPolytope):
        return Box(s.vertices.min(axis=0), s.vertices.max(axis=0))
    raise TypeError(f"unsupported set type {type(s).__name__}")


def reduce_vertices(V: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Drop duplicate and non-extreme points.

    The hull is taken inside the affine span of the points, so flat
    (lower-dimensional) point clouds are handled too.
    """
    V = np.asarray(V, dtype=float)
    scale = max(1.0, float(np.abs(V).max(initial=0.0)))
    V = np.unique(np.round(V / (tol * scale)) * (tol * scale), axis=0)
    if V.shape[0] <= 2:
        return V
    center = V.mean(axis=0)
    X = V - center
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    rank = int(np.sum(s > 1e-9 * max(1.0, s[0] if s.size else 0.0)))
    if rank == 0:
        return V[:1]
    Z = X @ Vt[:rank].T
    if rank == 1:
        z = Z[:, 0]
        return V[[int(np.argmin(z)), int(np.argmax(z))]]
    try:
        hull = ConvexHull(Z)
    except QhullError:
        return V
    return V[np.sort(hull.vertices)]


def minkowski_sum_vpoly(a: VPolytope, b: VPolytope, prune: bool = True) -> VPolytope:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dims {a.dim} and {b.dim} differ")
    S = (a.vertices[:, None, :] + b.vertices[None, :, :]).reshape(-1, a.dim)
    return VPolytope(reduce_vertices(S) if prune else S)


def minkowski_sum_many(terms: Sequence[VPolytope], prune_every: int = PRUNE_EVERY) -> VPolytope:
    """Left fold of Minkowski sums with hull reduction every ``prune_every`` terms."""
    if not terms:
        raise EmptyResult("no terms to sum")
    acc = VPolytope(reduce_vertices(terms[0].vertices))
    for i, t in enumerate(terms[1:], start=1):
        acc = minkowski_sum_vpoly(acc, t, prune=False)
        if i % prune_every == 0 or acc.vertices.shape[0] > 4096:
            acc = VPolytope(reduce_vertices(acc.vertices))
    return VPolytope(reduce_vertices(acc.vertices))


def convex_hull_membership(points, query, tol: float = INCLUSION_TOL):
    """Feasibility of lambda >= 0, sum lambda = 1, sum lambda_i p_i = query.

    Returns (feasible, multipliers or None). A small slack bounded by ``tol``
    absorbs LP round-off.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    q = _vec(query)
    if P.shape[0] == 0:
        raise EmptyResult("no points")
    if P.shape[1] != q.size:
        raise DimensionMismatch("query dimension differs from points")
    k, n = P.shape
    # variables: lambda (k), slack s (n, free but |s| <= t), t >= 0; minimise t
    c = np.zeros(k + n + 1)
    c[-1] = 1.0
    A_eq = np.zeros((n + 1, k + n + 1))
    A_eq[:n, :k] = P.T
    A_eq[:n, k: k + n] = np.eye(n)
    A_eq[n, :k] = 1.0
    b_eq = np.concatenate([q, [1.0]])
    A_ub = np.zeros((2 * n, k + n + 1))
    A_ub[:n, k: k + n] = np.eye(n)
    A_ub[n:, k: k + n] = -np.eye(n)
    A_ub[:, -1] = -1.0
    b_ub = np.zeros(2 * n)
    bounds = [(0, None)] * k + [(None, None)] * n + [(0, None)]
    res = solve_lp(c, A_eq, b_eq, A_ub, b_ub, bounds=bounds)
    if res.status is not Status.OPTIMAL:
        raise SolverFailure("hull membership LP failed", res.status)
    feasible = res.value <= tol
    lam = np.clip(res.x[:k], 0.0, None)
    return bool(feasible), (lam / lam.sum() if feasible else None)


def hrep(V: np.ndarray):
    """Facet inequalities ``A x <= b`` of a full-dimensional vertex polytope."""
    V = np.asarray(V, dtype=float)
    if V.shape[1] == 1:
        return np.array([[1.0], [-1.0]]), np.array([V.max(), -V.min()])
    hull = ConvexHull(V)
    A = hull.equations[:, :-1]
    b = -hull.equations[:, -1]
    return A, b


def contains_many(poly: VPolytope, points, tol: float = INCLUSION_TOL) -> np.ndarray:
    """Vectorised membership via the facet description (full-dimensional sets only)."""
    A, b = hrep(poly.vertices)
    P = np.atleast_2d(np.asarray(points, dtype=float))
    return np.all(P @ A.T <= b + tol, axis=1)


def chebyshev_center(A: np.ndarray, b: np.ndarray):
    """Centre and radius of the largest ball inside {x : A x <= b}."""
    norms = np.linalg.norm(A, axis=1)
    n = A.shape[1]
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = solve_lp(c, A_ub=np.column_stack([A, norms]), b_ub=b,
                   bounds=[(None, None)] * n + [(0, None)])
    if res.status is not Status.OPTIMAL:
        raise SolverFailure("Chebyshev centre LP failed", res.status)
    return res.x[:n], res.x[-1]


def intersect_vpoly(a: VPolytope, b: VPolytope) -> VPolytope:
    """Intersection of two full-dimensional vertex polytopes."""
    from scipy.spatial import HalfspaceIntersection

    if a.dim != b.dim:
        raise DimensionMismatch("dims differ")
    Aa, ba = hrep(a.vertices)
    Ab, bb = hrep(b.vertices)
    A = np.vstack([Aa, Ab])
    bvec = np.concatenate([ba, bb])
    if a.dim == 1:
        lo = max(a.vertices.min(), b.vertices.min())
        hi = min(a.vertices.max(), b.vertices.max())
        if lo > hi:
            raise EmptyResult("empty intersection")
        return VPolytope(np.array([[lo], [hi]]))
    center, radius = chebyshev_center(A, bvec)
    if radius <= 1e-12:
        raise EmptyResult("intersection has empty interior")
    hs = HalfspaceIntersection(np.column_stack([A, -bvec]), center)
    return VPolytope(reduce_vertices(hs.intersections))
