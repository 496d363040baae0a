import math

import numpy as np
import pytest

from isolab.convex import ConvexBody
from isolab.errors import ConstraintError
from isolab.measure import Density
from isolab.stability import (cross_interface, min_eigenvalue, reduced_translation_Q, robin_ground_state,
                              second_variation, simons_reduced, translation_second_derivative, translation_test)
from isolab.surface import Interface


def _circle(n=400):
    th = 2 * math.pi * np.arange(n) / n
    P = np.column_stack([np.cos(th), np.sin(th)])
    return Interface.from_polyline(P, closed=True, normals=P), th


def test_second_variation_of_fourier_modes():
    S, th = _circle()
    # uniform weight: Q(cos k theta) = (k^2 - 1) pi
    assert second_variation(S, None, np.cos(2 * th)) == pytest.approx(3 * math.pi, rel=1e-3)
    assert second_variation(S, None, np.cos(th)) == pytest.approx(0.0, abs=1e-3)


def test_mean_zero_enforced():
    S, th = _circle()
    with pytest.raises(ConstraintError):
        second_variation(S, None, np.ones_like(th), require_mean_zero=True)


def test_circle_unstable_in_gaussian():
    S, _ = _circle()
    g = Density.gaussian(1 / math.sqrt(2))
    v = min_eigenvalue(S, g)
    assert not v.stable
    assert v.min_rayleigh == pytest.approx(-2.0, rel=1e-3)
    tt = translation_test(S, g)
    assert tt["sum_Q"] == pytest.approx(-2 * tt["weighted_length"], rel=1e-3)


def test_segment_in_disk_stable():
    x = np.linspace(-1, 1, 201)
    S = Interface.from_polyline(np.column_stack([x, 0 * x]))
    v = min_eigenvalue(S, None, ConvexBody.disk(1.0))
    # Neumann-Robin problem on (-1, 1): the boundary curvature term lowers it below (pi/2)^2
    assert v.min_rayleigh < (math.pi / 2) ** 2


@pytest.mark.parametrize("n", [1, 2, 4])
def test_translation_family_matches_reduced_form(n):
    assert translation_second_derivative(n) == pytest.approx(reduced_translation_Q(n), rel=1e-3)


def test_simons_reduced_verdicts():
    assert simons_reduced(4, "ball", "boundary_fixed").stable
    assert not simons_reduced(4, "ball", "volume_constrained").stable
    v1 = simons_reduced(1, "ball", "volume_constrained")
    assert v1.min_rayleigh == pytest.approx(robin_ground_state(), rel=1e-3)
    assert not simons_reduced(2, "ball", "boundary_fixed").stable
    hull = simons_reduced(4, "hull", "volume_constrained")
    assert hull.min_rayleigh == -math.inf and hull.meta["first_order_area_slope"] < 0


def test_full_cross_agrees_with_reduced():
    full = min_eigenvalue(cross_interface(400), None, ConvexBody.disk(1.0))
    assert not full.stable
    assert full.min_rayleigh == pytest.approx(robin_ground_state(), rel=5e-3)
