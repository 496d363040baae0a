import math

import numpy as np
import pytest

from isolab.convex import ConvexBody
from isolab.errors import EmptyInterfaceError
from isolab.grid import Grid, ScalarField
from isolab.measure import Density
from isolab.surface import (Interface, contact_angle, curvature, extract, graph_fit, hausdorff_to_line,
                            intrinsic_extrinsic_ratio, perimeter)


def _circle(n=400, r=1.0):
    th = 2 * math.pi * np.arange(n) / n
    P = np.column_stack([np.cos(th), np.sin(th)])
    return Interface.from_polyline(r * P, closed=True, normals=P)


def test_extracted_circle_length_and_curvature():
    g = Grid.covering(ConvexBody.square(1.5), 256)
    f = ScalarField(g, 1.0 - np.linalg.norm(g.centers(), axis=-1))
    S = extract(f)
    assert perimeter(S) == pytest.approx(2 * math.pi, rel=1e-3)
    cd = curvature(S)
    # E is the inside of the circle, normals point outward: div(nu) = 1/r
    assert np.median(cd.H) == pytest.approx(1.0, rel=1e-2)


def test_weighted_perimeter_of_gaussian_circle():
    d = Density.gaussian()
    w = perimeter(_circle(2000), d)
    assert w == pytest.approx(math.exp(-0.5), rel=1e-5)


def test_empty_interface_raises():
    g = Grid.covering(ConvexBody.square(1.0), 32)
    with pytest.raises(EmptyInterfaceError):
        extract(ScalarField(g, np.ones(g.shape)))


def test_diameter_contact_angles_and_graph():
    body = ConvexBody.disk(1.0)
    g = Grid.covering(body, 128)
    f = ScalarField(g, g.centers()[..., 1] - 0.1 * g.centers()[..., 0])
    S = extract(f, body=body)
    ang = contact_angle(S, body)
    expected = 90.0
    assert np.allclose(ang, expected, atol=1.0)
    fit = graph_fit(S)
    assert fit.lipschitz < 1e-2
    assert abs(fit.direction @ np.array([-0.1, 1.0]) / math.hypot(0.1, 1.0)) > 0.999
    dist, n, c = hausdorff_to_line(S, body, through=(0.0, 0.0))
    assert dist < g.h


def test_intrinsic_extrinsic_ratio_of_segment_is_one():
    x = np.linspace(0, 1, 50)
    S = Interface.from_polyline(np.column_stack([x, 0 * x]))
    assert intrinsic_extrinsic_ratio(S)["ratio"] == pytest.approx(1.0)
