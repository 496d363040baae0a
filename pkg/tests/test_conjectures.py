import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isolab.conjectures import (RegionLabel, _cut_fraction, cone_fit, hull_fraction, kls_check,
                                milman_chain_check, two_hyperplane_margin, two_hyperplane_scan)
from isolab.convex import ConvexBody
from isolab.errors import PreconditionError
from isolab.grid import Grid
from isolab.measure import Density


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(-1.0, 1.0))
def test_cut_fraction_matches_sampling(theta, s):
    a = np.array([math.cos(theta), math.sin(theta)])
    k = 400
    y = (np.arange(k) + 0.5) / k - 0.5
    Y = np.stack(np.meshgrid(y, y, indexing="ij"), axis=-1).reshape(-1, 2)
    sampled = np.mean(Y @ a >= s)
    assert float(_cut_fraction(np.array([s]), a, 1.0)[0]) == pytest.approx(sampled, abs=6e-3)


@pytest.fixture(scope="module")
def square_setup():
    body = ConvexBody.square(1.0)
    return body, Density.uniform(body), Grid.covering(body, 128)


def test_halfspace_margin_is_half(square_setup):
    body, d, g = square_setup
    E = RegionLabel.from_function(g, d, lambda x: x[..., 0])
    r = two_hyperplane_margin(E, 360)
    assert r.scalars["b_star"] == pytest.approx(0.5, abs=1e-12)
    assert hull_fraction(E, body).scalars["hull_fraction"] == pytest.approx(0.5, abs=0.02)


def test_sinusoid_margin(square_setup):
    body, d, g = square_setup
    E = RegionLabel.from_function(g, d, lambda x: x[..., 1] - 0.2 * np.sin(math.pi * x[..., 0]))
    th, A, c1, c2, b = two_hyperplane_scan(E, 360)
    vertical = int(np.argmin(np.linalg.norm(A - [0.0, 1.0], axis=1)))
    # {x2 >= 0.2} carries 0.8 * 2 / 4 of the square
    assert b[vertical] == pytest.approx(0.4, abs=2 * g.h)
    # a tilted line touching both bumps does better: (1 - c) / 2 with c about 0.137
    assert b.max() == pytest.approx(0.4316, abs=2 * g.h)


def test_margin_monotone_under_enlarging_E(square_setup):
    body, d, g = square_setup
    small = RegionLabel.from_function(g, d, lambda x: x[..., 0] - 0.3)
    big = RegionLabel.from_function(g, d, lambda x: x[..., 0] - 0.1)
    _, _, c1s, _, _ = two_hyperplane_scan(small, 90)
    _, _, c1b, _, _ = two_hyperplane_scan(big, 90)
    assert np.all(c1b <= c1s + 1e-12)


def test_wedge_cone(square_setup):
    body, d, g = square_setup
    E = RegionLabel.from_function(g, d, lambda x: x[..., 1] - np.abs(x[..., 0]))
    r = cone_fit(E, 360)
    assert r.scalars["kind"] == "cone"
    assert r.scalars["cone_mass"] == pytest.approx(0.25, abs=0.01)
    assert two_hyperplane_margin(E, 360).verdict == "indeterminate"


def test_gaussian_halfspace_chain():
    d = Density.gaussian()
    g = d.grid(128)
    E = RegionLabel.from_function(g, d, lambda x: x[..., 0])
    th = two_hyperplane_margin(E, 360)
    k = kls_check(E, th)
    assert k.scalars["kls_ratio"] == pytest.approx(1.0, abs=1e-3)
    m = milman_chain_check(E, th)
    assert m.verdict == "consistent"
    assert m.scalars["L"] == pytest.approx(2 * 0.6744897501960817, rel=1e-9)


def test_asymmetric_density_rejected():
    body = ConvexBody.box([-1, -1], [2, 1])
    d = Density.uniform(body)
    E = RegionLabel.from_function(Grid.covering(body, 64), d, lambda x: x[..., 0])
    with pytest.raises(PreconditionError):
        two_hyperplane_margin(E)
