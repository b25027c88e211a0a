from dataclasses import replace

import numpy as np
import pytest

from rolmpc.errors import DimensionMismatch, SpecViolation
from rolmpc.flat_system import forward_shift
from rolmpc.geometry import Box
from rolmpc.safe_set import (
    SafeSetStore,
    barycentric_cost,
    costs_to_go,
    hull_point,
    insert_iteration,
    sample_hull,
    stage_cost,
    successor,
    task_cost,
    terminal_membership,
)

from conftest import sample_lifted


def test_task_cost_examples():
    assert task_cost(np.array([30.0, 0, 0])) == 10.0
    assert task_cost(np.array([45.0, 0, 0])) == 0.0


def test_windows_and_costs(model, seed_store):
    Ys, _, _, store = seed_store
    T = Ys.shape[1]
    assert store.size == T - model.R + 1
    assert store.C[-1] == 0.0 and store.succ[-1] == -1
    assert np.all(np.diff(store.C) <= 0)
    L = np.stack([Ys[:, t: t + model.R + 1] for t in range(T - model.R)])
    assert np.allclose(store.C[:-1] - store.C[1:], stage_cost(model, L, store.goal))
    assert np.allclose(costs_to_go(model, Ys, store.goal), store.C)


def test_stage_cost_nonnegative(model, params, seed_store, rng):
    Y = sample_lifted(params, rng, 1000)
    assert np.all(stage_cost(model, Y, seed_store[3].goal) >= 0)


def test_stored_windows_cost_at_most_their_own(seed_store):
    store = seed_store[3]
    for g in range(0, store.size, 5):
        V, lam = barycentric_cost(store, store.window(g))
        assert V <= store.C[g] + 1e-9
        assert np.allclose(hull_point(store, lam), store.window(g), atol=1e-7)
    assert barycentric_cost(store, store.window(store.size - 1))[0] == pytest.approx(0.0, abs=1e-9)


def test_value_is_convex_on_hull(seed_store, rng):
    store = seed_store[3]
    for _ in range(50):
        a, b = rng.choice(store.size, 2, replace=False)
        th = rng.random()
        mid = th * store.window(a) + (1 - th) * store.window(b)
        Va, Vb = barycentric_cost(store, store.window(a))[0], barycentric_cost(store, store.window(b))[0]
        assert barycentric_cost(store, mid)[0] <= th * Va + (1 - th) * Vb + 1e-7


def test_reinsert_leaves_values_unchanged(seed_store, rng):
    Ys, tight, E, store = seed_store
    twice = insert_iteration(store, Ys, 1, tight, E)
    assert twice.size == 2 * store.size
    for lam in sample_hull(store, rng, 100):
        w = hull_point(store, lam)
        assert barycentric_cost(twice, w)[0] == pytest.approx(barycentric_cost(store, w)[0], abs=1e-6)


def test_membership(seed_store):
    store = seed_store[3]
    assert terminal_membership(store, store.window(3))
    assert not terminal_membership(store, store.window(3) + 5.0)
    with pytest.raises(DimensionMismatch):
        barycentric_cost(store, np.zeros(3))


def test_successor_shifts_along_trajectories(seed_store, rng):
    store = seed_store[3]
    for lam in sample_hull(store, rng, 50):
        y, lam_next = successor(store, lam)
        w_next = forward_shift(hull_point(store, lam), y)
        assert np.allclose(hull_point(store, lam_next), w_next, atol=1e-12)
        assert lam_next.sum() == pytest.approx(1.0)
    lam = np.zeros(store.size)
    lam[-1] = 1.0
    with pytest.raises(ValueError):
        successor(store, lam)


def test_insert_rejections(model, params, seed_store):
    Ys, tight, E, store = seed_store
    with pytest.raises(SpecViolation) as exc:
        insert_iteration(store, Ys[:, :20], 1, tight, E)
    assert exc.value.condition == "goal"
    small = replace(tight, X_bar=Box(tight.X_bar.lb, tight.X_bar.ub - [10.0, 0, 0]))
    with pytest.raises(SpecViolation) as exc:
        insert_iteration(store, Ys, 1, small, E)
    assert exc.value.condition == "state_in_tightened"
    errors = np.full((Ys.shape[1] - model.R + 1, 3), 0.5)
    with pytest.raises(SpecViolation) as exc:
        insert_iteration(store, Ys, 1, tight, E, errors)
    assert exc.value.condition == "error_in_tube"


def test_store_round_trip(model, seed_store):
    store = seed_store[3]
    back = SafeSetStore.from_dict(store.to_dict(), model)
    assert np.array_equal(back.W, store.W) and np.array_equal(back.C, store.C)
