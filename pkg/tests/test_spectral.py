import math

import numpy as np
import pytest
from scipy.special import jnp_zeros

from isolab.convex import ConvexBody
from isolab.spectral import deform_family, hot_spots_check, integrate, interpolate_bodies, solve_neumann


def test_square_is_degenerate_and_normalized():
    e = solve_neumann(ConvexBody.square(1.0), n=96, k=2)
    assert e[0].degenerate and e[1].degenerate
    assert e[0].eigenvalue == pytest.approx(math.pi ** 2 / 4, rel=2e-3)
    assert integrate(e[0].u) == pytest.approx(0.0, abs=1e-10)
    u = e[0].u
    assert float(np.sum(u.values ** 2 * u.grid.mask) * u.grid.cell_volume) == pytest.approx(1.0)


def test_ellipse_hot_spots_on_major_axis():
    body = ConvexBody.ellipse(1.5, 1.0, m=128)
    e = solve_neumann(body, n=128)[0]
    rep = hot_spots_check(e, body)
    assert rep.monotone
    assert abs(rep.direction[0]) > 0.99
    assert rep.max_boundary_distance < 2 * e.u.grid.h


def test_disk_eigenvalue_coarse():
    e = solve_neumann(ConvexBody.disk(1.0), n=128)[0]
    assert e.eigenvalue == pytest.approx(jnp_zeros(1, 1)[0] ** 2, rel=5e-3)


def test_interpolation_endpoints():
    a, b = ConvexBody.square(1.0), ConvexBody.disk(1.0)
    assert interpolate_bodies(a, b, 0.0).volume == pytest.approx(4.0, rel=1e-3)
    assert interpolate_bodies(a, b, 1.0).volume == pytest.approx(math.pi, rel=1e-3)


def test_deform_family_tracks_margin():
    out = deform_family(ConvexBody.square(1.0), ConvexBody.box([-1.5, -0.5], [1.5, 0.5]), steps=2, n=96)
    assert len(out["steps"]) == 3
    assert out["first_nonpositive_margin"] is None
