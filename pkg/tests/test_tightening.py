import numpy as np
import pytest

from rolmpc.error_invariant import InvariantSet
from rolmpc.bicycle import seed_outputs
from rolmpc.geometry import Box, VPolytope
from rolmpc.lmpc import seed_boxes
from rolmpc.tightening import (
    MembershipOracle,
    TightenedConstraints,
    facet_grid,
    hat_sets,
    in_S_x,
    solve_tightening,
)


@pytest.fixture(scope="module")
def hats(params):
    return params.X.intersect(params.operating_state_box), params.U.intersect(params.operating_input_box)


def test_hat_sets_shrink_by_error_box():
    E = InvariantSet.from_polytope(VPolytope.from_box(Box([-0.2, -0.1], [0.2, 0.1])), np.array([[1.0, 0.0]]))
    Xh, Uh = hat_sets(Box([-1.0, -1.0], [1.0, 1.0]), Box([-1.0], [1.0]), E)
    assert np.allclose(Xh.lb, [-0.8, -0.9]) and np.allclose(Xh.ub, [0.8, 0.9])
    assert np.allclose(Uh.ub, [0.8])


def test_facet_grid_square():
    pts = facet_grid(Box([0.0, 0.0], [2.0, 2.0]), 3)
    assert pts.shape == (8, 2)
    on_boundary = np.any((pts == 0.0) | (pts == 2.0), axis=1)
    assert on_boundary.all()
    # corners come first
    assert {tuple(p) for p in pts[:4]} == {(0, 0), (0, 2), (2, 0), (2, 2)}


def test_facet_grid_degenerate_axis():
    pts = facet_grid(Box([0.0, 1.0], [1.0, 1.0]), 4)
    assert np.all(pts[:, 1] == 1.0) and pts.shape[0] == 4


def test_oracle_kind():
    with pytest.raises(ValueError):
        MembershipOracle(None, Box([0.0], [1.0]), Box([0.0], [1.0]), "z")


def test_membership_examples(model, hats):
    Xh, Uh = hats
    ok, Y = in_S_x(np.array([20.0, 0.0, 0.0]), Xh, model, Uh)
    assert ok and np.allclose(model.Fx(Y[:, :-1]), [20.0, 0.0, 0.0], atol=1e-8)
    assert not in_S_x(np.array([20.0, 5.0, 0.0]), Xh, model, Uh)[0]
    # inside the hat box, but the heading bounds spill over its limit
    assert not in_S_x(np.array([20.0, 0.0, 0.34]), Xh, model, Uh)[0]


def test_witness_bounds_inside_hat(model, hats):
    Xh, Uh = hats
    ox = MembershipOracle(model, Xh, Uh, "x")
    ou = MembershipOracle(model, Xh, Uh, "u")
    for oracle, point in ((ox, np.array([10.0, 0.5, 0.1])), (ou, np.array([5.0, 0.1]))):
        ok, Y = oracle.check(point)
        assert ok
        lo, hi = model.bound_pieces(Y)
        box = oracle.box
        assert np.all(lo.min(0)[oracle.comps] >= box.lb - 1e-9)
        assert np.all(hi.max(0)[oracle.comps] <= box.ub + 1e-9)


@pytest.fixture(scope="module")
def first(model, params, hats):
    px, pu = seed_boxes(model, seed_outputs(params, 0.85, 36, 58.5))
    return px, pu, solve_tightening(px, pu, *hats, model)


def test_tightening_contains_seed_and_stays_in_hat(model, hats, first):
    px, pu, T = first
    Xh, Uh = hats
    assert T.X_bar.contains_box(px, 1e-12) and T.U_bar.contains_box(pu, 1e-12)
    assert Xh.contains_box(T.X_bar, 1e-12) and Uh.contains_box(T.U_bar, 1e-12)
    ox = MembershipOracle(model, Xh, Uh, "x")
    ou = MembershipOracle(model, Xh, Uh, "u")
    assert all(ox.check(p)[0] for p in facet_grid(T.X_bar))
    assert all(ou.check(p)[0] for p in facet_grid(T.U_bar))
    assert np.allclose(T.alpha_x * px.lb + T.v_x, T.X_bar.lb)


def test_tightening_fixed_point(model, hats, first):
    _, _, T = first
    again = solve_tightening(T.X_bar, T.U_bar, *hats, model, iteration=2)
    assert np.allclose(again.X_bar.lb, T.X_bar.lb) and np.allclose(again.U_bar.ub, T.U_bar.ub)


def test_seed_box_outside_S_rejected(model, hats):
    from rolmpc.errors import Infeasible
    Xh, Uh = hats
    with pytest.raises(Infeasible):
        solve_tightening(Box([10.0, 0.0, 0.3], [11.0, 0.1, 0.34]), Box([4.0, 0.0], [4.5, 0.1]), Xh, Uh, model)


def test_round_trip(first):
    _, _, T = first
    back = TightenedConstraints.from_dict(T.to_dict())
    assert np.array_equal(back.X_bar.lb, T.X_bar.lb) and np.array_equal(back.v_u, T.v_u)
    assert back.iteration == T.iteration
