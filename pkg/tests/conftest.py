import time
from types import SimpleNamespace

import numpy as np
import pytest

from rolmpc.bicycle import BicycleParams, bicycle_model, seed_outputs
from rolmpc.error_invariant import InvariantSet
from rolmpc.geometry import Box, VPolytope
from rolmpc.lmpc import make_goal, seed_boxes
from rolmpc.safe_set import SafeSetStore, insert_iteration
from rolmpc.tightening import TightenedConstraints


@pytest.fixture(scope="session")
def params():
    return BicycleParams()


@pytest.fixture(scope="session")
def model(params):
    return bicycle_model(params)


@pytest.fixture(scope="session")
def literal_model(params):
    return bicycle_model(params, literal_bounds=True)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def nominal_rollout(model, rng, steps, x0=None, v=(4.0, 5.5), delta=0.05):
    """Random nominal bicycle rollout with forward speed and small steering."""
    x0 = np.array([rng.uniform(0, 30), rng.uniform(-0.8, 0.8), rng.uniform(-0.2, 0.2)]) if x0 is None else x0
    us = np.column_stack([rng.uniform(*v, size=steps), rng.uniform(-delta, delta, size=steps)])
    xs = model.simulate(x0, us)
    return xs, us


def sample_lifted(params, rng, k):
    """Random lifted outputs around the operating region (not all admissible)."""
    klo, khi = params.kappa_bounds
    ds1 = rng.uniform(params.v_min * params.dt / khi, params.v_max * params.dt / klo, k)
    ds2 = ds1 + rng.uniform(-0.1, 0.1, k)
    slope = klo * np.tan(params.psi_max)
    de1 = rng.uniform(-slope, slope, k) * ds1
    de2 = de1 + rng.uniform(-0.01, 0.01, k)
    s0, e0 = rng.uniform(0, 55, k), rng.uniform(-params.ey_max, params.ey_max, k)
    s = np.column_stack([s0, s0 + ds1, s0 + ds1 + ds2])
    e = np.column_stack([e0, e0 + de1, e0 + de1 + de2])
    return np.stack([s, e], axis=1)


@pytest.fixture(scope="session")
def seed_store(model, params):
    """Seed outputs, seed-box tightening, a small error set and the store holding the seed."""
    Ys = seed_outputs(params, 0.85, 36, 58.5)
    px, pu = seed_boxes(model, Ys)
    one = np.ones(1)
    tight = TightenedConstraints(px, pu, params.X, params.U, one, one, 0 * one, 0 * one, 1)
    E = InvariantSet.from_polytope(VPolytope.from_box(Box.symmetric([0.01, 0.01, 0.005])), np.zeros((2, 3)))
    goal = make_goal(params.goal_box, params.operating_input_box, E)
    store = insert_iteration(SafeSetStore(model, goal), Ys, 0, tight, E)
    return Ys, tight, E, store


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """Default 5-iteration chicane run written to disk, shared by the end-to-end tests."""
    from rolmpc.bicycle_demo import DemoConfig, run, setup
    from rolmpc.errors import RolmpcError
    from rolmpc.persistence import RunWriter

    cfg = DemoConfig()
    s = setup(cfg)
    out = tmp_path_factory.mktemp("run5")
    writer = RunWriter(str(out), cfg.to_dict(), s.K.K)
    t0 = time.perf_counter()
    error = None
    records = arts = store = None
    try:
        records, arts, store = run(cfg, writer)
    except RolmpcError as exc:
        error = exc
    return SimpleNamespace(dir=str(out), cfg=cfg, setup=s, records=records, arts=arts, store=store,
                           error=error, elapsed=time.perf_counter() - t0)


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = (mark.args[0], mark.args[1])
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _CRITERIA[key] = _CRITERIA.get(key, True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (k, title), ok in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"criterion {k:2d} {title}: {'PASS' if ok else 'FAIL'}")
