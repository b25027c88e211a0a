import numpy as np

from rolmpc.bicycle import BicycleParams, DisturbanceOracle, curvature, seed_outputs
from rolmpc.lmpc import seed_boxes


def test_dynamics_example(model, params):
    x = model.f(np.zeros(3), np.array([5.0, 0.0]))
    assert np.allclose(x, [1.0, 0.0, -5.0 * curvature(0.0) * params.dt])


def test_zero_velocity_fixes_state(model, rng):
    x = np.array([3.0, 0.4, 0.1])
    assert np.allclose(model.f(x, np.array([0.0, rng.uniform(-1, 1)])), x)


def test_params_round_trip():
    p = BicycleParams(dt=0.1, x_start=(1.0, 0.5, 0.0))
    assert BicycleParams.from_dict(p.to_dict()) == p


def test_disturbance_obeys_increment_bound(rng):
    plant = DisturbanceOracle(0.0329, 0.1640)
    q = rng.uniform(-5, 5, size=(2000, 5))
    d = plant.smooth(q[:, :3], q[:, 3:]) + plant.noise(rng, 2000)
    i, j = rng.integers(0, 2000, size=(2, 5000))
    lhs = np.linalg.norm(d[i] - d[j], axis=1)
    rhs = 0.0329 * np.linalg.norm(q[i] - q[j], axis=1) + 2 * 0.1640
    assert np.all(lhs <= rhs + 1e-12)


def test_seed_is_nominal_and_in_operating_region(model, params):
    Ys = seed_outputs(params)
    L = np.stack([Ys[:, t: t + 3] for t in range(Ys.shape[1] - 2)])
    assert np.min(model.admissible(L)) >= 0
    xb, ub = seed_boxes(model, Ys)
    assert params.operating_state_box.contains_box(xb)
    assert params.operating_input_box.contains_box(ub)
    assert Ys[0, -1] >= params.goal_s
    assert np.allclose(model.Fx(Ys[:, :2]), params.x_start)
