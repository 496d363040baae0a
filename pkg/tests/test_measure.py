import math

import numpy as np
import pytest
from scipy.stats import norm

from isolab.convex import ConvexBody
from isolab.errors import PreconditionError
from isolab.measure import Density, check_log_concave, marginal, measure, tail_bound_check


def test_uniform_mass_is_one():
    body = ConvexBody.disk(1.0)
    d = Density.uniform(body)
    assert measure(d, None, d.grid(128)) == pytest.approx(1.0, abs=1e-3)


def test_gaussian_halfplane_mass():
    d = Density.gaussian()
    g = d.grid(256)
    m = measure(d, lambda x: x[..., 0] >= 1.0, g) / measure(d, None, g)
    assert m == pytest.approx(norm.sf(1.0), abs=5e-4)


def test_marginal_values():
    g = Density.gaussian()
    m = marginal(g, [0.6, 0.8], [0.0, 1.0])
    assert m.values[0] == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-8)
    assert m.values[1] == pytest.approx(norm.pdf(1.0), rel=1e-8)
    sq = Density.uniform(ConvexBody.square(1.0))
    diag = marginal(sq, np.array([1.0, 1.0]) / math.sqrt(2), [0.0])
    assert diag.values[0] == pytest.approx(2 * math.sqrt(2) / 4, rel=1e-8)


def test_tail_bound_equality_for_exponential():
    d = Density.product([("laplace", 1.0), ("laplace", 1.0)])
    m = marginal(d, [1.0, 0.0], [0.0])
    r = tail_bound_check(m, 1.0)
    assert r["lhs"] == pytest.approx(r["rhs"], abs=1e-6)


def test_tail_bound_rejects_asymmetric():
    body = ConvexBody.box([-1, -1], [2, 1])
    m = marginal(Density.uniform(body), [1.0, 0.0], np.linspace(-2, 2, 9))
    with pytest.raises(PreconditionError):
        tail_bound_check(m, 0.5)


def test_log_concavity(rng):
    assert check_log_concave(Density.gaussian(), rng)
    assert check_log_concave(Density.power_exp(1.5), rng)
