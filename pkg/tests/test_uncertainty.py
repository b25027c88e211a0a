import numpy as np
import pytest
import scipy.linalg as sla

from rolmpc.errors import DimensionMismatch
from rolmpc.geometry import Box
from rolmpc.uncertainty import (
    QCMatrix,
    TransitionDatum,
    build_support_sdp,
    estimate_constants,
    lipschitz_qc,
    subsample,
    transitions_from_trajectory,
)


def datum(q, d, t=0, it=0):
    return TransitionDatum(np.asarray(q, float), np.asarray(d, float), it, t)


def test_lipschitz_qc_example():
    (M,) = lipschitz_qc(0.0329, 0.1640, 3, 2)
    ref = sla.block_diag([[8 * 0.1640 ** 2]], 2 * 0.0329 ** 2 * np.eye(5), -np.eye(3))
    assert np.allclose(M.matrix, ref, rtol=0, atol=1e-15)
    assert M.matrix[0, 0] == pytest.approx(0.215168)
    assert M.matrix[1, 1] == pytest.approx(0.00216482)


def test_lipschitz_qc_zero():
    (M,) = lipschitz_qc(0.0, 0.0, 3, 2)
    assert np.array_equal(M.matrix, sla.block_diag([[0.0]], np.zeros((5, 5)), -np.eye(3)))


def test_qc_validation():
    with pytest.raises(ValueError):
        QCMatrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        lipschitz_qc(-1.0, 0.0, 1, 1)


def test_qc_sound_on_lipschitz_pairs(rng):
    L, g = 0.03, 0.1
    (M,) = lipschitz_qc(L, g, 1, 1)
    q = rng.uniform(-3, 3, size=(10_000, 2, 2))
    w = rng.uniform(-g, g, size=(10_000, 2, 1))
    d = L * np.sin(q[..., :1]) + w
    vals = M.value(q[:, 0] - q[:, 1], d[:, 0] - d[:, 1])
    assert np.all(vals >= -1e-12)


def test_estimate_constants_examples():
    L, g = estimate_constants([datum([0, 0], [0.4, 0, 0]), datum([0, 0], [0, 0, 0])])
    assert L == pytest.approx(0.0, abs=1e-9) and g == pytest.approx(0.2)
    L, g = estimate_constants([datum([i, 0], [1.0]) for i in range(4)])
    assert L == pytest.approx(0.0, abs=1e-12) and g == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        estimate_constants([datum([0], [0])])


def test_estimate_constants_upper_bound_pairwise(rng):
    x = rng.uniform(-3, 3, 40)
    d = 0.03 * np.sin(x) + rng.uniform(-0.1, 0.1, 40)
    data = [datum([xi], [di], t) for t, (xi, di) in enumerate(zip(x, d))]
    L, g = estimate_constants(data)
    i, j = np.triu_indices(40, 1)
    assert np.all(np.abs(d[i] - d[j]) <= L * np.abs(x[i] - x[j]) + 2 * g + 1e-9)


def test_subsample_caps_per_iteration():
    data = [datum([t], [0], t, it) for it in range(2) for t in range(120)]
    out = subsample(data, 50)
    assert len(out) == 100
    assert [d.time for d in out if d.iteration == 0][0] == 0
    assert [d.time for d in out if d.iteration == 0][-1] == 119


def test_transitions_residuals(model, rng):
    xs = rng.standard_normal((6, 3))
    us = rng.uniform(1, 2, (5, 2))
    data = transitions_from_trajectory(model, xs, us, 3)
    assert data[2].d == pytest.approx(xs[3] - model.f(xs[2], us[2]))
    back = TransitionDatum.from_dict(data[1].to_dict())
    assert np.array_equal(back.q, data[1].q) and np.array_equal(back.d, data[1].d)
    assert (back.iteration, back.time) == (3, 1)


def test_single_datum_ball():
    n, m = 3, 2
    X, U = Box(-np.ones(n), np.ones(n)), Box(-np.ones(m), np.ones(m))
    est = build_support_sdp([datum(np.zeros(n + m), np.zeros(n))], lipschitz_qc(0.0, 1.0, n, m), X, U)
    radius = np.sqrt(np.linalg.eigvalsh(est.ellipsoid.shape))
    assert np.allclose(radius, np.sqrt(8.0), rtol=0.02)
    assert np.allclose(est.ellipsoid.center, 0, atol=1e-5)


def test_support_nesting_and_monotone_trace(rng):
    n, m = 2, 1
    X, U = Box(-np.ones(n), np.ones(n)), Box(-np.ones(m), np.ones(m))
    L, g = 0.2, 0.05
    q = rng.uniform(-1, 1, size=(12, n + m))
    d = L / np.sqrt(n) * np.sin(q[:, :n] + q[:, n:]) + rng.uniform(-g, g, (12, n)) / np.sqrt(n)
    data = [datum(qi, di, t) for t, (qi, di) in enumerate(zip(q, d))]
    qc = lipschitz_qc(L, g, n, m)
    prev, traces = None, []
    for k in (2, 5, 8, 12):
        est = build_support_sdp(data[:k], qc, X, U, prev=prev, iteration=k)
        if prev is not None:
            pts = est.ellipsoid.sample(rng, 10_000)
            assert prev.ellipsoid.contains(pts, tol=1e-6)
        assert est.ellipsoid.contains(d[:k], tol=1e-6)
        traces.append(est.trace)
        prev = est
    assert all(b <= a + 1e-9 for a, b in zip(traces, traces[1:]))


def test_support_dimension_check():
    with pytest.raises(DimensionMismatch):
        build_support_sdp([datum([0, 0, 0], [0])], lipschitz_qc(0.1, 0.1, 2, 1),
                          Box([-1], [1]), Box([-1], [1]))
