"""Difference-flat system abstraction: flat maps, bounding functions and output shifts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, DomainError

Array = np.ndarray


@dataclass(frozen=True)
class SystemModel:
    """A difference-flat system given as function handles.

    Windows are ``m x R`` arrays (columns are consecutive outputs); lifted
    outputs are ``m x (R+1)``.

    ``bound_pieces(Y)`` returns two ``(P, n+m)`` arrays of smooth pieces; the
    lower bounding function is the column-wise min of the first, the upper one
    the column-wise max of the second.  Constraints of the form
    ``lower >= lb`` / ``upper <= ub`` therefore split into one smooth
    inequality per piece.

    ``admissible(Y)`` returns a vector that is ``>= 0`` on the region where the
    bounding functions are valid.  It must be affine in ``Y`` so that convex
    combinations of admissible lifted outputs stay admissible.

    All callables accept leading batch dimensions (``x`` of shape ``(..., n)``,
    ``Y`` of shape ``(..., m, R+1)`` and so on) and must be total, so that
    optimisers may probe them anywhere.  ``state_domain`` / ``input_domain``
    flag arguments where the flat maps are singular.

    ``informative`` masks the bounding components that depend on ``Y``;
    constant components (valid but uninformative bounds) are excluded from
    interval constraints in the MPC, which then relies on the exact value.
    """

    n: int
    m: int
    R: int
    dt: float
    f: Callable[[Array, Array], Array]
    h: Callable[[Array], Array]
    Fx: Callable[[Array], Array]
    Fu: Callable[[Array], Array]
    bound_pieces: Callable[[Array], tuple]
    admissible: Optional[Callable[[Array], Array]] = None
    state_domain: Optional[Callable[[Array], bool]] = None
    input_domain: Optional[Callable[[Array], bool]] = None
    informative: Optional[tuple] = None
    name: str = "system"

    @property
    def informative_mask(self) -> Array:
        if self.informative is None:
            return np.ones(self.n + self.m, dtype=bool)
        return np.asarray(self.informative, dtype=bool)

    def check_window(self, w) -> Array:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.m, self.R):
            raise DimensionMismatch(f"window must be {self.m}x{self.R}, got {w.shape}")
        return w

    def check_lifted(self, Y) -> Array:
        Y = np.asarray(Y, dtype=float)
        if Y.shape != (self.m, self.R + 1):
            raise DimensionMismatch(f"lifted output must be {self.m}x{self.R + 1}, got {Y.shape}")
        return Y

    def admissibility(self, Y) -> Array:
        if self.admissible is None:
            return np.zeros(0)
        return np.asarray(self.admissible(self.check_lifted(Y)), dtype=float)

    def simulate(self, x0, inputs) -> Array:
        """Nominal rollout; returns states x_0..x_T as rows."""
        xs = [np.asarray(x0, dtype=float)]
        for u in np.atleast_2d(inputs):
            xs.append(np.asarray(self.f(xs[-1], u), dtype=float))
        return np.array(xs)

    def outputs(self, states) -> Array:
        """Output sequence as an ``m x T`` array."""
        return np.array([self.h(x) for x in np.atleast_2d(states)]).T


def forward_shift(w, y_new) -> Array:
    """Drop the oldest column of a window and append ``y_new``."""
    w = np.asarray(w, dtype=float)
    y = np.asarray(y_new, dtype=float).reshape(-1)
    if w.ndim != 2 or y.size != w.shape[0]:
        raise DimensionMismatch("output dimension differs from window rows")
    return np.column_stack([w[:, 1:], y])


def backward_shift(tail, y_first, R: Optional[int] = None) -> Array:
    """Prepend ``y_first`` to the oldest ``R`` columns of ``tail``.

    With a window (``R`` columns) this yields the lifted output starting at
    ``y_first``; with a lifted output ``Y_{t+1}`` and ``R`` given it yields
    ``Y_t``.
    """
    tail = np.asarray(tail, dtype=float)
    y = np.asarray(y_first, dtype=float).reshape(-1)
    if tail.ndim != 2 or y.size != tail.shape[0]:
        raise DimensionMismatch("output dimension differs from window rows")
    if R is not None:
        if tail.shape[1] < R:
            raise DimensionMismatch(f"need at least {R} columns")
        tail = tail[:, :R]
    return np.column_stack([y, tail])


def reconstruct_state(model: SystemModel, w) -> Array:
    w = model.check_window(w)
    if model.state_domain is not None and not model.state_domain(w):
        raise DomainError("window outside the domain of the state map")
    return np.asarray(model.Fx(w), dtype=float)


def reconstruct_input(model: SystemModel, Y) -> Array:
    Y = model.check_lifted(Y)
    if model.input_domain is not None and not model.input_domain(Y):
        raise DomainError("lifted output outside the domain of the input map")
    return np.asarray(model.Fu(Y), dtype=float)


def bounding_eval(model: SystemModel, Y):
    """(lower, upper) bounding-function values, each of length n+m."""
    lo, hi = model.bound_pieces(model.check_lifted(Y))
    return np.min(np.atleast_2d(lo), axis=0), np.max(np.atleast_2d(hi), axis=0)


def lifted_outputs(model: SystemModel, outputs) -> list:
    """All lifted outputs Y_t = [y_t, ..., y_{t+R}] of an ``m x T`` output sequence."""
    Ys = np.asarray(outputs, dtype=float)
    return [Ys[:, t: t + model.R + 1] for t in range(Ys.shape[1] - model.R)]


def windows(model: SystemModel, outputs) -> list:
    Ys = np.asarray(outputs, dtype=float)
    return [Ys[:, t: t + model.R] for t in range(Ys.shape[1] - model.R + 1)]
