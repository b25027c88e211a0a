import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rolmpc.errors import DimensionMismatch, EmptyResult
from rolmpc.geometry import (
    Box,
    Ellipsoid,
    VPolytope,
    bounding_box,
    box_pontryagin_diff,
    contains_many,
    convex_hull_membership,
    intersect_vpoly,
    minkowski_sum_many,
    minkowski_sum_vpoly,
    reduce_vertices,
)


def test_pontryagin_interval():
    r = box_pontryagin_diff(Box([0.0], [10.0]), Box([-1.0], [1.0]))
    assert np.allclose(r.lb, [1.0]) and np.allclose(r.ub, [9.0])


def test_pontryagin_zero_is_identity():
    a = Box([-2.0, -4.5], [60.0, 4.5])
    r = box_pontryagin_diff(a, Box([0.0, 0.0], [0.0, 0.0]))
    assert np.array_equal(r.lb, a.lb) and np.array_equal(r.ub, a.ub)


def test_pontryagin_track_box():
    r = box_pontryagin_diff(Box([-2.0, -4.5], [60.0, 4.5]), Box([-0.1, -0.2], [0.1, 0.2]))
    assert np.allclose(r.lb, [-1.9, -4.3]) and np.allclose(r.ub, [59.9, 4.3])


def test_pontryagin_empty_and_mismatch():
    with pytest.raises(EmptyResult):
        box_pontryagin_diff(Box([0.0], [1.0]), Box([-1.0], [1.0]))
    with pytest.raises(DimensionMismatch):
        box_pontryagin_diff(Box([0.0], [1.0]), Box([0.0, 0.0], [1.0, 1.0]))


box_strategy = st.lists(st.tuples(st.floats(-5, 5), st.floats(0.5, 5), st.floats(0, 0.4)), min_size=1, max_size=4)


@settings(max_examples=60, deadline=None)
@given(box_strategy)
def test_pontryagin_sum_inside(rows):
    lb = np.array([c for c, _, _ in rows])
    w = np.array([w for _, w, _ in rows])
    r = np.array([r for _, _, r in rows]) * w
    a, b = Box(lb, lb + w), Box(-r, r)
    diff = box_pontryagin_diff(a, b)
    for v in (diff + b).vertices():
        assert a.contains(v, 1e-12)


def test_bounding_box_examples():
    ball = bounding_box(Ellipsoid(np.zeros(2), np.eye(2)))
    assert np.allclose(ball.lb, -1) and np.allclose(ball.ub, 1)
    seg = bounding_box(VPolytope(np.array([[0.0, 0.0], [2.0, 1.0]])))
    assert np.allclose(seg.lb, [0, 0]) and np.allclose(seg.ub, [2, 1])
    e = bounding_box(Ellipsoid([1.0, 0.0], np.diag([4.0, 9.0])))
    assert np.allclose(e.lb, [-1, -3]) and np.allclose(e.ub, [3, 3])


def test_bounding_box_contains_samples(rng):
    A = rng.standard_normal((3, 3))
    E = Ellipsoid(rng.standard_normal(3), A @ A.T + 0.1 * np.eye(3))
    b = bounding_box(E)
    assert np.all([b.contains(p) for p in E.sample(rng, 1000)])
    P = VPolytope(rng.standard_normal((8, 3)))
    bp = bounding_box(P)
    assert np.all([bp.contains(p) for p in P.sample(rng, 1000)])


def test_ellipsoid_level_and_contains():
    E = Ellipsoid([1.0, 0.0], np.diag([4.0, 9.0]))
    assert E.level([3.0, 0.0]) == pytest.approx(1.0)
    assert E.contains([1.0, 2.9]) and not E.contains([1.0, 3.1])


def test_minkowski_examples():
    seg = VPolytope(np.array([[-1.0], [1.0]]))
    s = minkowski_sum_vpoly(seg, seg)
    assert sorted(s.vertices.ravel()) == [-2.0, 2.0]
    sq = VPolytope.from_box(Box([0.0, 0.0], [1.0, 1.0]))
    same = minkowski_sum_vpoly(sq, VPolytope(np.zeros((1, 2))))
    assert bounding_box(same).contains_box(Box([0, 0], [1, 1]), 0) and same.vertices.shape[0] == 4
    big = minkowski_sum_vpoly(sq, sq)
    assert {tuple(v) for v in big.vertices} == {(0.0, 0.0), (0.0, 2.0), (2.0, 0.0), (2.0, 2.0)}


def test_minkowski_mismatch():
    with pytest.raises(DimensionMismatch):
        minkowski_sum_vpoly(VPolytope(np.zeros((1, 1))), VPolytope(np.zeros((1, 2))))


def test_minkowski_many_matches_pairwise(rng):
    terms = [VPolytope(rng.standard_normal((4, 2))) for _ in range(7)]
    acc = terms[0]
    for t in terms[1:]:
        acc = minkowski_sum_vpoly(acc, t)
    many = minkowski_sum_many(terms)
    assert np.allclose(np.sort(acc.vertices, axis=0), np.sort(many.vertices, axis=0))


def test_hull_membership_examples(rng):
    ok, lam = convex_hull_membership([[0.0], [1.0]], [0.5])
    assert ok and np.allclose(lam, [0.5, 0.5])
    pts = rng.standard_normal((5, 3))
    ok, lam = convex_hull_membership(pts, pts[2])
    assert ok and np.allclose(lam @ pts, pts[2])


def _outside_triangle(tri, q):
    signs = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        signs.append(np.sign((b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])))
    return len(set(signs)) > 1


def test_hull_membership_matches_orientation_oracle(rng):
    for _ in range(50):
        tri = rng.standard_normal((3, 2))
        q = rng.standard_normal(2) * 2
        ok, _ = convex_hull_membership(tri, q)
        assert ok == (not _outside_triangle(tri, q))


def test_hull_membership_monotone(rng):
    pts = rng.standard_normal((4, 2))
    queries = rng.standard_normal((40, 2))
    before = [convex_hull_membership(pts, q)[0] for q in queries]
    more = np.vstack([pts, rng.standard_normal((3, 2))])
    after = [convex_hull_membership(more, q)[0] for q in queries]
    assert all(a or not b for a, b in zip(after, before))


def test_reduce_vertices_flat_cloud():
    V = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.5, 0.5, 0.0], [2.0, 0.0, 0.0]])
    R = reduce_vertices(V)
    assert R.shape[0] == 3


def test_intersect_and_contains_many():
    a = VPolytope.from_box(Box([0.0, 0.0], [2.0, 2.0]))
    b = VPolytope.from_box(Box([1.0, 1.0], [3.0, 3.0]))
    box = bounding_box(intersect_vpoly(a, b))
    assert np.allclose(box.lb, [1, 1]) and np.allclose(box.ub, [2, 2])
    assert list(contains_many(a, [[1.0, 1.0], [2.5, 0.0]])) == [True, False]
