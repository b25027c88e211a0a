"""Frenet-frame kinematic bicycle on a chicane: model, flat maps, plant and seed design."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .flat_system import SystemModel
from .geometry import Box

DOMAIN_EPS = 1e-6


def curvature(s):
    s = np.asarray(s, dtype=float)
    return np.arctan(100.0 - 0.5 * s ** 2) / (10.0 * np.pi)


CURVATURE_BOUND = 1.0 / 20.0  # |C(s)| <= atan(inf)/(10 pi) = 1/20


@dataclass
class BicycleParams:
    dt: float = 0.2
    L: float = 4.0
    x_lb: tuple = (-2.0, -4.5, -np.pi / 3)
    x_ub: tuple = (60.0, 4.5, np.pi / 3)
    u_lb: tuple = (0.0, -np.pi / 2)
    u_ub: tuple = (18.0, np.pi / 2)
    goal_s: float = 40.0
    x_start: tuple = (0.0, 1.0, 0.0)
    # operating region used for the invariant, the bounding functions and the tightening
    ey_max: float = 1.2
    psi_max: float = 0.35
    v_min: float = 3.5
    v_max: float = 6.0
    delta_max: float = 0.55
    lateral_accel: float = 0.01   # bound on |second difference of e_y|
    ds_change: float = 0.1        # bound on |change of Delta s| between steps

    @property
    def X(self) -> Box:
        return Box(self.x_lb, self.x_ub)

    @property
    def U(self) -> Box:
        return Box(self.u_lb, self.u_ub)

    @property
    def kappa_bounds(self):
        """Range of the curvature factor 1 - e_y C(s) over |e_y| <= ey_max."""
        return 1.0 - self.ey_max * CURVATURE_BOUND, 1.0 + self.ey_max * CURVATURE_BOUND

    @property
    def operating_state_box(self) -> Box:
        return Box([self.x_lb[0], -self.ey_max, -self.psi_max], [self.x_ub[0], self.ey_max, self.psi_max])

    @property
    def operating_input_box(self) -> Box:
        return Box([self.v_min, -self.delta_max], [self.v_max, self.delta_max])

    @property
    def goal_box(self) -> Box:
        return Box([self.goal_s, self.x_lb[1], self.x_lb[2]], list(self.x_ub))

    def to_dict(self) -> dict:
        return {f.name: (list(getattr(self, f.name)) if isinstance(getattr(self, f.name), tuple)
                         else getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d) -> "BicycleParams":
        kw = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                kw[f.name] = tuple(v) if isinstance(v, (list, tuple)) else v
        return cls(**kw)


def dynamics(x, u, p: BicycleParams):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    s, ey, epsi = x[..., 0], x[..., 1], x[..., 2]
    v, delta = u[..., 0], u[..., 1]
    C = curvature(s)
    k = 1.0 - ey * C
    s1 = s + v * np.cos(epsi) / k * p.dt
    ey1 = ey + v * np.sin(epsi) * p.dt
    epsi1 = epsi + v * (np.tan(delta) / p.L - np.cos(epsi) * C / k) * p.dt
    return np.stack([s1, ey1, epsi1], axis=-1)


def output(x):
    return np.asarray(x, dtype=float)[..., :2]


def state_map(W, p: BicycleParams):
    """State from a 2x2 window [y_t, y_{t+1}] (batched)."""
    W = np.asarray(W, dtype=float)
    s0, e0 = W[..., 0, 0], W[..., 1, 0]
    ds, de = W[..., 0, 1] - s0, W[..., 1, 1] - e0
    k = 1.0 - e0 * curvature(s0)
    return np.stack([s0, e0, np.arctan2(de, k * ds)], axis=-1)


def input_map(Y, p: BicycleParams):
    """Input from a 2x3 lifted output [y_t, y_{t+1}, y_{t+2}] (batched)."""
    Y = np.asarray(Y, dtype=float)
    x0 = state_map(Y[..., :, 0:2], p)
    x1 = state_map(Y[..., :, 1:3], p)
    s0, e0 = Y[..., 0, 0], Y[..., 1, 0]
    ds, de = Y[..., 0, 1] - s0, Y[..., 1, 1] - e0
    C = curvature(s0)
    v = np.hypot((1.0 - e0 * C) * ds, de) / p.dt
    dpsi = x1[..., 2] - x0[..., 2]
    v_safe = np.maximum(v, 1e-12)
    delta = np.arctan(p.L * (dpsi + ds * C) / (p.dt * v_safe))
    return np.stack([v, delta], axis=-1)


def bound_pieces(Y, p: BicycleParams, literal: bool = False):
    """Smooth pieces of the bounding functions, shapes (..., 2, 5).

    ``literal=True`` gives the full-track version (curvature factor over the
    whole lateral range, speed lower bound 0, steering bounds +-pi/2);
    otherwise the operating-region version is used.
    """
    Y = np.asarray(Y, dtype=float)
    if literal:
        klo, khi = 1.0 - 4.5 * CURVATURE_BOUND, 1.0 + 4.5 * CURVATURE_BOUND
    else:
        klo, khi = p.kappa_bounds
    s0, e0 = Y[..., 0, 0], Y[..., 1, 0]
    ds, de = Y[..., 0, 1] - s0, Y[..., 1, 1] - e0
    ds_safe = np.where(np.abs(ds) < 1e-12, 1e-12, ds)
    psi_lo = np.arctan(de / (klo * ds_safe))
    psi_hi = np.arctan(de / (khi * ds_safe))
    v_up = np.hypot(khi * ds, de) / p.dt
    if literal:
        v_low = np.zeros_like(s0)
        d_lim = np.full_like(s0, np.pi / 2)
    else:
        v_low = klo * ds / p.dt
        d_lim = np.full_like(s0, p.delta_max)
    lo1 = np.stack([s0, e0, psi_lo, v_low, -d_lim], axis=-1)
    lo2 = np.stack([s0, e0, psi_hi, v_low, -d_lim], axis=-1)
    hi1 = np.stack([s0, e0, psi_lo, v_up, d_lim], axis=-1)
    hi2 = np.stack([s0, e0, psi_hi, v_up, d_lim], axis=-1)
    return np.stack([lo1, lo2], axis=-2), np.stack([hi1, hi2], axis=-2)


def admissible(Y, p: BicycleParams):
    """Affine constraints (>= 0) defining where the operating bounds are valid."""
    Y = np.asarray(Y, dtype=float)
    klo, khi = p.kappa_bounds
    s, e = Y[..., 0, :], Y[..., 1, :]
    ds = np.diff(s, axis=-1)
    de = np.diff(e, axis=-1)
    ds_lo = p.v_min * p.dt / khi
    ds_hi = p.v_max * p.dt / klo
    slope = klo * np.tan(p.psi_max)
    parts = [
        ds - ds_lo, ds_hi - ds,
        p.ey_max - e, p.ey_max + e,
        slope * ds - de, slope * ds + de,
        (p.lateral_accel - (de[..., 1:] - de[..., :-1])),
        (p.lateral_accel + (de[..., 1:] - de[..., :-1])),
        (p.ds_change - (ds[..., 1:] - ds[..., :-1])),
        (p.ds_change + (ds[..., 1:] - ds[..., :-1])),
    ]
    return np.concatenate(parts, axis=-1)


def bicycle_model(params: Optional[BicycleParams] = None, literal_bounds: bool = False) -> SystemModel:
    p = params or BicycleParams()

    def state_domain(W):
        return bool(np.all(np.asarray(W)[..., 0, 1] - np.asarray(W)[..., 0, 0] >= DOMAIN_EPS))

    def input_domain(Y):
        Y = np.asarray(Y)
        if not (state_domain(Y[..., :, 0:2]) and state_domain(Y[..., :, 1:3])):
            return False
        return bool(np.all(input_map(Y, p)[..., 0] >= DOMAIN_EPS))

    return SystemModel(
        n=3, m=2, R=2, dt=p.dt,
        f=lambda x, u: dynamics(x, u, p),
        h=output,
        Fx=lambda W: state_map(W, p),
        Fu=lambda Y: input_map(Y, p),
        bound_pieces=lambda Y: bound_pieces(Y, p, literal_bounds),
        admissible=None if literal_bounds else (lambda Y: admissible(Y, p)),
        state_domain=state_domain,
        input_domain=input_domain,
        informative=(True, True, True, not literal_bounds, False),
        name="frenet_bicycle",
    )


@dataclass
class DisturbanceOracle:
    """Synthetic unmodelled dynamics d(x, u) = L * phi(x, u) + w.

    ``phi`` is 1-Lipschitz in the Euclidean norm of (x, u) and ``w`` is drawn
    uniformly from the ball of radius ``gamma``; hence any two residuals obey
    |d_i - d_j| <= L |q_i - q_j| + 2 gamma.
    """

    L_true: float = 5e-4
    gamma_true: float = 2e-3
    n: int = 3
    m: int = 2
    seed: int = 0
    directions: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.directions is None:
            rng = np.random.default_rng(12345)
            A = rng.standard_normal((self.n, self.n + self.m))
            A /= np.linalg.norm(A, axis=1, keepdims=True)
            self.directions = A

    def smooth(self, x, u):
        q = np.concatenate([np.asarray(x, float), np.asarray(u, float)], axis=-1)
        return self.L_true / np.sqrt(self.n) * np.sin(q @ self.directions.T)

    def noise(self, rng: np.random.Generator, k: Optional[int] = None):
        shape = (self.n,) if k is None else (k, self.n)
        g = rng.standard_normal(shape)
        g /= np.linalg.norm(g, axis=-1, keepdims=True)
        r = rng.random(() if k is None else (k, 1)) ** (1.0 / self.n)
        return self.gamma_true * r * g

    def __call__(self, x, u, rng: np.random.Generator):
        return self.smooth(x, u) + self.noise(rng)


def seed_outputs(p: BicycleParams, ds: float = 0.85, decay_steps: int = 36,
                 s_end: float = 58.5) -> np.ndarray:
    """Hand-designed nominal flat-output sequence for the seed iteration.

    Constant progress per step; the lateral offset stays at its start value
    for two samples (zero initial heading) and then decays with a smoothstep.
    """
    s0, e0 = p.x_start[0], p.x_start[1]
    T = int(np.ceil((s_end - s0) / ds)) + 1
    t = np.arange(T)
    s = s0 + ds * t
    tau = np.clip((t - 1) / decay_steps, 0.0, 1.0)
    e = e0 * (1.0 - (3 * tau ** 2 - 2 * tau ** 3))
    return np.vstack([s, e])
