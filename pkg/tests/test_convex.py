import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isolab.convex import Cone, ConvexBody, body_from_spec, cone_contains, convex_hull
from isolab.errors import DegenerateInputError


def test_square_support_and_volume():
    sq = ConvexBody.square(1.0)
    assert sq.support([1.0, 0.0]) == pytest.approx(1.0)
    assert sq.support(np.array([1.0, 1.0]) / math.sqrt(2)) == pytest.approx(math.sqrt(2))
    assert sq.volume == pytest.approx(4.0)
    assert sq.symmetric


def test_disk_polygon_is_inscribed():
    d = ConvexBody.disk(1.0)
    assert d.volume == pytest.approx(math.pi, rel=2e-4)
    assert np.allclose(np.linalg.norm(d.vertices, axis=1), 1.0)


def test_boundary_distance_signs():
    sq = ConvexBody.square(1.0)
    dist = sq.boundary_distance(np.array([[0.0, 0.0], [0.9, 0.0], [1.5, 0.0]]))
    assert dist[0] == pytest.approx(1.0)
    assert dist[1] == pytest.approx(0.1)
    assert dist[2] < 0


def test_hull_rejects_collinear():
    with pytest.raises(DegenerateInputError):
        convex_hull([[0, 0], [1, 1], [2, 2]])


def test_cone_halfspace_limit():
    c = Cone(np.zeros(2), np.array([1.0, 0.0]), math.pi / 2)
    assert cone_contains(c, np.array([[0.1, 5.0]]))[0]
    assert not cone_contains(c, np.array([[-0.1, 5.0]]))[0]


def test_body_from_spec_kinds():
    assert body_from_spec({"kind": "box", "lo": [-2, -1], "hi": [2, 1]}).volume == pytest.approx(8)
    hull = body_from_spec({"kind": "hull-of-points", "points": [[1, 0], [0, 1], [-1, 0], [0, -1]]})
    assert hull.volume == pytest.approx(2)
    with pytest.raises(ValueError):
        body_from_spec({"kind": "blob"})


points = st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=6, max_size=30)


@settings(max_examples=30, deadline=None)
@given(points)
def test_hull_contains_its_points(pts):
    P = np.array(pts)
    try:
        H = convex_hull(P)
    except DegenerateInputError:
        return
    assert np.all(H.boundary_distance(P) > -1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.2, 3), st.floats(0.2, 3))
def test_support_width_positive_and_symmetric(theta, a, b):
    E = ConvexBody.ellipse(a, b, m=64, rotation=0.3)
    u = np.array([math.cos(theta), math.sin(theta)])
    assert E.support(u) + E.support(-u) > 0
    assert E.support(u) == pytest.approx(E.support(-u), abs=1e-9)
