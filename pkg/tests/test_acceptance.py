"""End-to-end acceptance checks, one test per criterion.

Each criterion's PASS/FAIL line is printed in the pytest terminal summary.
Criteria 3 to 10 share one default 5-iteration run (``demo_run``).
"""

import filecmp
import os
import time

import numpy as np
import pytest

from rolmpc import cli
from rolmpc.bicycle import DisturbanceOracle
from rolmpc.flat_system import lifted_outputs, windows
from rolmpc.geometry import Box
from rolmpc.persistence import load_run, save_run
from rolmpc.uncertainty import (
    TransitionDatum,
    build_support_sdp,
    estimate_constants,
    lipschitz_qc,
    subsample,
    transitions_from_trajectory,
)
from rolmpc.validation import check_invariance, check_safe_set, check_tightening

from conftest import nominal_rollout, sample_lifted

L_EX, GAMMA_EX = 0.0329, 0.1640


def _completed(demo_run):
    assert demo_run.error is None, f"run aborted: {demo_run.error!r}"
    return demo_run


@pytest.mark.criterion(1, "flat round trip")
def test_flat_round_trip(model, rng):
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        xs, us = nominal_rollout(model, rng, 50)
        Ys = model.outputs(xs)
        W, L = np.stack(windows(model, Ys)), np.stack(lifted_outputs(model, Ys))
        worst = max(worst, np.max(np.abs(model.Fx(W) - xs[: W.shape[0]])),
                    np.max(np.abs(model.Fu(L) - us[: L.shape[0]])))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-8
    assert elapsed < 5.0


@pytest.mark.criterion(2, "QC soundness")
def test_qc_soundness(params, rng):
    plant = DisturbanceOracle(L_EX, GAMMA_EX, 3, 2)
    (M,) = lipschitz_qc(L_EX, GAMMA_EX, 3, 2)
    k = 100_000
    XU = Box(np.concatenate([params.X.lb, params.U.lb]), np.concatenate([params.X.ub, params.U.ub]))
    qa, qb = XU.sample(rng, k), XU.sample(rng, k)
    da = plant.smooth(qa[:, :3], qa[:, 3:]) + plant.noise(rng, k)
    db = plant.smooth(qb[:, :3], qb[:, 3:]) + plant.noise(rng, k)
    assert np.sum(M.value(qa - qb, da - db) < -1e-12) == 0


@pytest.mark.criterion(3, "support SDP")
def test_support_sdp(demo_run):
    n, m = 3, 2
    one = build_support_sdp([TransitionDatum(np.zeros(n + m), np.zeros(n), 0, 0)],
                            lipschitz_qc(0.0, GAMMA_EX, n, m), Box(-np.ones(n), np.ones(n)),
                            Box(-np.ones(m), np.ones(m)))
    radius = np.sqrt(np.linalg.eigvalsh(one.ellipsoid.shape))
    assert np.allclose(radius, np.sqrt(8.0) * GAMMA_EX, rtol=0.02)

    run = _completed(demo_run)
    arts, recs, cfg = run.arts, run.records, run.cfg.lmpc
    model, p = run.setup.model, run.setup.params
    traces = [a.support.trace for a in arts]
    assert len(traces) == 5
    assert all(b <= a for a, b in zip(traces, traces[1:]))
    # every residual seen before iteration j lies in the j-th support
    for a in arts:
        d = np.array([t.d for r in recs[: a.j] for t in transitions_from_trajectory(model, r.x, r.u, r.j)])
        assert np.all(a.support.ellipsoid.contains(d, tol=1e-6))
    # rebuild the five supports from the stored trajectories and time them
    t0 = time.perf_counter()
    prev = None
    for a in arts:
        data = []
        for r in recs[: a.j]:
            data += transitions_from_trajectory(model, r.x, r.u, r.j)
        data = subsample(data, cfg.max_per_iteration)
        L_hat, g_hat = estimate_constants(data)
        qc = lipschitz_qc(cfg.qc_margin * L_hat, cfg.qc_margin * g_hat, model.n, model.m)
        prev = build_support_sdp(data, qc, p.X, p.U, prev=prev, iteration=a.j)
        assert prev.trace == pytest.approx(a.support.trace, rel=1e-6)
    assert time.perf_counter() - t0 < 60.0


@pytest.mark.criterion(4, "RPI contract")
def test_rpi_contract(demo_run):
    run = _completed(demo_run)
    p = run.setup.params
    rep = check_invariance(run.setup.model, run.setup.K.K, run.arts, p.operating_state_box,
                           p.operating_input_box, samples=10_000)
    assert rep.passed, rep.details


@pytest.mark.criterion(5, "tightening")
def test_tightening_growth_and_soundness(demo_run):
    run = _completed(demo_run)
    p = run.setup.params
    assert [a.j for a in run.arts] == [1, 2, 3, 4, 5]
    rep = check_tightening(run.setup.K.K, run.arts, p.X, p.U, samples=10_000)
    assert rep.passed, rep.details


@pytest.mark.criterion(6, "interval-hull property")
def test_interval_hull(model, params, rng):
    pool = sample_lifted(params, rng, 40_000)
    pool = pool[np.all(model.admissible(pool) >= 0, axis=-1)]
    assert pool.shape[0] > 1000
    bad = 0
    for _ in range(10_000):
        k = int(rng.integers(1, 7))
        Ys = pool[rng.choice(pool.shape[0], k, replace=False)]
        Yb = np.tensordot(rng.dirichlet(np.ones(k)), Ys, axes=1)
        lo, hi = model.bound_pieces(Ys)
        lo_b, hi_b = model.bound_pieces(Yb)
        bad += bool(np.any(lo_b.min(0) < lo.min(axis=(0, 1)) - 1e-9)
                    or np.any(hi_b.max(0) > hi.max(axis=(0, 1)) + 1e-9))
    assert bad == 0


@pytest.mark.criterion(7, "safe-set successor and CLF decrease")
def test_safe_set_invariance(demo_run):
    run = _completed(demo_run)
    rep = check_safe_set(run.store, run.arts, samples=200, tol=1e-6)
    assert rep.passed, rep.details


@pytest.mark.criterion(8, "closed loop")
def test_closed_loop(demo_run):
    run = _completed(demo_run)
    p = run.setup.params
    assert run.cfg.lmpc.N == 10
    assert len(run.records) == 6
    for r in run.records:
        assert np.all([p.X.contains(x, 1e-9) for x in r.x]) and np.all([p.U.contains(u, 1e-9) for u in r.u])
    for r in run.records[1:]:
        assert r.steps <= run.cfg.lmpc.step_cap
        dist = np.linalg.norm(np.maximum(p.goal_box.lb - r.x[-1], 0) + np.maximum(r.x[-1] - p.goal_box.ub, 0))
        assert dist < 1e-2
    costs = [r.iteration_cost for r in run.records]
    assert all(b <= a for a, b in zip(costs, costs[1:])), costs
    assert run.elapsed < 15 * 60


@pytest.mark.criterion(9, "solve-time budget")
def test_solve_time(demo_run):
    run = _completed(demo_run)
    assert run.records[5].j == 5
    assert np.median(run.records[5].solve_ms) < 300.0


@pytest.mark.criterion(10, "persistence")
def test_persistence_round_trip(demo_run, tmp_path, capsys):
    run = _completed(demo_run)
    loaded = load_run(run.dir, run.setup.model)
    save_run(str(tmp_path), loaded)
    names = sorted(os.listdir(run.dir))
    assert names == sorted(os.listdir(tmp_path))
    match, mismatch, errors = filecmp.cmpfiles(run.dir, str(tmp_path), names, shallow=False)
    assert not mismatch and not errors
    assert cli.main(["validate", run.dir]) == 0
    out = capsys.readouterr().out
    assert "invariance: PASS" in out and "tightening: PASS" in out and "safe_set: PASS" in out
