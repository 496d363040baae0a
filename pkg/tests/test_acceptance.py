"""Acceptance suite: twelve end-to-end numerical criteria.

Each test appends one ``PASS``/``FAIL`` line to ``RESULTS``; the lines are
printed in the pytest terminal summary, or directly when this file is run as
a script.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import jnp_zeros, jvp

from isolab.convex import ConvexBody
from isolab.field import MinimizeConfig, PhaseFieldProblem, energy, energy_partials, minimize, random_init
from isolab.grid import Grid
from isolab.lab import parse_config, run
from isolab.measure import Density, marginal, tail_bound_check
from isolab.spectral import hot_spots_check, solve_neumann
from isolab.stability import (cross_interface, min_eigenvalue, simons_reduced, translation_test)
from isolab.surface import Interface
from isolab.conjectures import RegionLabel, milman_chain_check, two_hyperplane_margin

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str):
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[n]


def _circle(n, r=1.0):
    th = 2 * math.pi * np.arange(n) / n
    P = np.column_stack([np.cos(th), np.sin(th)])
    return Interface.from_polyline(r * P, closed=True, normals=P)


def test_01_rectangle_neumann():
    t0 = time.perf_counter()
    body = ConvexBody.box([-1.0, -0.5], [1.0, 0.5])
    e = solve_neumann(body, n=256)[0]
    rep = hot_spots_check(e, body)
    dt = time.perf_counter() - t0
    exact = math.pi ** 2 / 4
    rel = abs(e.eigenvalue - exact) / exact
    ok = rel < 0.01 and rep.nodal_lipschitz <= 0.05 and rep.margin > 0 and dt < 30
    record(1, ok, f"lambda1={e.eigenvalue:.6f} (rel {rel:.1e}), nodal L={rep.nodal_lipschitz:.2e}, "
                  f"margin={rep.margin:.4f}, {dt:.1f}s")


def test_02_disk_neumann():
    # oracle: first root of J1' by bracketing, checked against the tabulated scipy root
    root = brentq(lambda x: jvp(1, x), 1.0, 3.0, xtol=1e-14)
    assert root == pytest.approx(jnp_zeros(1, 1)[0], abs=1e-10)
    exact = root ** 2
    t0 = time.perf_counter()
    e = solve_neumann(ConvexBody.disk(1.0), n=256)[0]
    dt = time.perf_counter() - t0
    rel = abs(e.eigenvalue - exact) / exact
    record(2, rel < 0.01 and dt < 60, f"lambda1={e.eigenvalue:.6f} vs {exact:.6f} (rel {rel:.1e}), {dt:.1f}s")


DISK_CFG = {"experiment": "isoperimetric", "name": "disk-half", "seed": 1, "body": {"kind": "disk"},
            "grid": {"n": 256}, "eps": {"final": 0.02, "stages": 3}, "isoperimetric": {"alpha": 0.5, "starts": 2}}


def test_03_disk_half(tmp_path):
    t0 = time.perf_counter()
    rec = run(parse_config(DISK_CFG), tmp_path)
    dt = time.perf_counter() - t0
    s = rec.summary
    h = 2.0 / 256
    angles = np.array(s["contact_angles"])
    ok = (rec.status == "ok" and abs(s["length"] - 2) / 2 < 0.03 and s["hausdorff_to_diameter"] <= 2 * h
          and np.all(np.abs(angles - 90) <= 3) and dt < 300)
    record(3, ok, f"length={s['length']:.5f}, Hausdorff={s['hausdorff_to_diameter'] / h:.2f}h, "
                  f"angles={np.round(angles, 2).tolist()}, {dt:.1f}s")


def _square_oracle(alpha: float, half: float = 1.0) -> tuple[str, float]:
    """Least relative perimeter among the classical candidates of area ``alpha * |Q|``."""
    A = alpha * (2 * half) ** 2
    side = 2 * half
    cands = {
        "corner quarter-disk": math.pi * math.sqrt(4 * A / math.pi) / 2,
        "edge half-disk": math.pi * math.sqrt(2 * A / math.pi),
        "strip": side,
        "corner triangle": math.sqrt(2) * math.sqrt(2 * A),
    }
    name = min(cands, key=cands.get)
    return name, cands[name]


def test_04_square_corner(tmp_path):
    name, oracle = _square_oracle(0.1)
    # the unit-square value scaled to side 2
    assert oracle == pytest.approx(2 * (math.pi / 2) * math.sqrt(0.4 / math.pi))
    cfg = {"experiment": "isoperimetric", "name": "square-corner", "seed": 3, "body": {"kind": "square"},
           "grid": {"n": 256}, "eps": {"final": 0.02}, "isoperimetric": {"alpha": 0.1, "starts": 4}, "workers": 4}
    rec = run(parse_config(cfg), tmp_path)
    L = rec.summary["length"]
    rel = abs(L - oracle) / oracle
    record(4, rec.status == "ok" and rel < 0.05 and name == "corner quarter-disk",
           f"length={L:.5f} vs {name} {oracle:.5f} (rel {rel:.1e})")


def test_05_gaussian_half(tmp_path):
    cfg = {"experiment": "isoperimetric", "name": "gaussian-half", "seed": 2, "density": {"kind": "gaussian"},
           "grid": {"n": 256}, "isoperimetric": {"alpha": 0.5, "starts": 1}}
    rec = run(parse_config(cfg), tmp_path)
    s = rec.summary
    exact = 1 / math.sqrt(2 * math.pi)
    rel = abs(s["weighted_perimeter"] - exact) / exact
    cells = s["hausdorff_to_diameter_cells"]
    record(5, rec.status == "ok" and rel < 0.03 and cells <= 2,
           f"P_mu={s['weighted_perimeter']:.5f} vs {exact:.5f} (rel {rel:.1e}), line distance={cells:.2f}h")


def _random_density(rng):
    k = rng.integers(4)
    if k == 0:
        return Density.gaussian(float(rng.uniform(0.5, 2.0)))
    if k == 1:
        return Density.power_exp(float(rng.uniform(1.0, 3.0)), float(rng.uniform(0.5, 2.0)))
    if k == 2:
        kinds = ["gaussian", "laplace", "uniform"]
        return Density.product([(kinds[rng.integers(3)], float(rng.uniform(0.5, 2.0))) for _ in range(2)])
    a, b = rng.uniform(0.5, 2.0, 2)
    return Density.uniform(ConvexBody.ellipse(float(a), float(b), m=64, rotation=float(rng.uniform(0, math.pi))))


def test_06_tail_bound():
    expo = Density.product([("laplace", 1.0), ("laplace", 1.0)])
    r = tail_bound_check(marginal(expo, [1.0, 0.0], [0.0]), 1.0)
    eq_gap = abs(r["lhs"] - r["rhs"])
    strict = []
    for d in (Density.gaussian(), Density.uniform(ConvexBody.square(1.0))):
        r = tail_bound_check(marginal(d, [1.0, 0.0], np.linspace(-3, 3, 61)), 0.5)
        strict.append(r["rhs"] - r["lhs"])
    rng = np.random.default_rng(7)
    fails = 0
    for _ in range(20):
        d = _random_density(rng)
        th = rng.uniform(0, 2 * math.pi)
        a = np.array([math.cos(th), math.sin(th)])
        m = marginal(d, a, np.linspace(-2, 2, 41))
        for t in rng.uniform(0, 3, 3):
            fails += not tail_bound_check(m, float(t))["satisfied"]
    ok = eq_gap < 1e-6 and min(strict) > 1e-3 and fails == 0
    record(6, ok, f"exponential |lhs-rhs|={eq_gap:.1e}, strict gaps={np.round(strict, 4).tolist()}, "
                  f"random suite failures={fails}/60")


def test_07_translation_identity():
    ns = np.array([50, 100, 200, 400, 800])
    sq, res = [], []
    for n in ns:
        t = translation_test(_circle(int(n)), None)
        sq.append(t["max_sum_sq_residual"])
        res.append(t["max_grad_identity_residual"])
    h = 2 * math.pi / ns
    order = np.polyfit(np.log(h), np.log(res), 1)[0]
    C = max(r / hh for r, hh in zip(res, h))
    ok = max(sq) < 1e-12 and order >= 1
    record(7, ok, f"max|sum f^2 - 1|={max(sq):.1e}, identity residual order={order:.2f}, C={C:.3f}")


def test_08_symmetry_breaking():
    t0 = time.perf_counter()
    S = _circle(400)
    g = Density.gaussian(1 / math.sqrt(2))  # V = |x|^2 up to a constant
    tt = translation_test(S, g)
    v = min_eigenvalue(S, g)
    dt = time.perf_counter() - t0
    length_exact = 2 * math.pi * math.exp(-1) / math.pi
    rel = abs(tt["sum_Q"] - (-2 * length_exact)) / (2 * length_exact)
    record(8, rel < 0.02 and v.min_rayleigh < 0 and dt < 10,
           f"sum Q={tt['sum_Q']:.5f} vs {-2 * length_exact:.5f} (rel {rel:.1e}), min Rayleigh={v.min_rayleigh:.4f}, "
           f"{dt:.1f}s")


def test_09_simons():
    t0 = time.perf_counter()
    red1 = simons_reduced(1, "ball", "volume_constrained")
    full1 = min_eigenvalue(cross_interface(400), None, ConvexBody.disk(1.0))
    fixed4 = simons_reduced(4, "ball", "boundary_fixed")
    vol4 = simons_reduced(4, "ball", "volume_constrained")
    dt = time.perf_counter() - t0
    ok = (not red1.stable) and (not full1.stable) and fixed4.stable and (not vol4.stable) and dt < 120
    record(9, ok, f"n=1 reduced {red1.min_rayleigh:.4f} / full {full1.min_rayleigh:.4f} (both unstable), "
                  f"n=4 fixed {fixed4.min_rayleigh:.4f} stable, volume {vol4.min_rayleigh:.4f} unstable, {dt:.1f}s")


def test_10_milman_chain():
    d = Density.gaussian()
    E = RegionLabel.from_function(d.grid(256), d, lambda x: x[..., 0])
    th = two_hyperplane_margin(E)
    m = milman_chain_check(E, th)
    s = m.scalars
    ok = abs(s["b_star"] - 0.5) <= 0.01 and s["gap_slack"] >= 0.05 and s["LP_slack"] >= 0.05
    record(10, ok, f"b*={s['b_star']:.4f}, w_a(0)L={s['gap_lhs']:.4f} <= {s['gap_rhs']:.4f} "
                   f"(slack {s['gap_slack']:.0%}), L P={s['LP']:.4f} >= 0.25")


def test_11_optimizer_properties():
    rng = np.random.default_rng(11)
    worst = 0.0
    for k in range(6):
        body = ConvexBody.disk(1.0) if k % 2 else ConvexBody.square(1.0)
        dens = Density.gaussian(float(rng.uniform(0.4, 1.0))) if k < 3 else Density.uniform(body)
        g = Grid.covering(body, 16)
        p = PhaseFieldProblem(dens, g, 2.5 * g.h, float(rng.uniform(0.2, 0.8)))
        f = p.project(rng.uniform(-1.2, 1.2, g.shape))
        grad = energy_partials(f, p)
        v = rng.standard_normal(g.shape) * p.active
        s = 1e-5
        fd = (energy(f + s * v, p) - energy(f - s * v, p)) / (2 * s)
        worst = max(worst, abs(fd - float(np.sum(grad * v))) / abs(fd))
    body = ConvexBody.square(1.0)
    g = Grid.covering(body, 96)
    p = PhaseFieldProblem(Density.uniform(body), g, 2 * g.h, 0.3)
    trace = []
    cfg = MinimizeConfig(eps_stages=2, callback=lambda it, f, E, r: trace.append((E, p.mass_defect(f))))
    res = minimize(p, random_init(p, rng, eps=4 * g.h), cfg)
    increases = sum(b > a for st in res.stages for a, b in zip(st.history, st.history[1:]))
    drift = max(abs(dm) for _, dm in trace)
    ok = worst < 1e-5 and increases == 0 and drift < 1e-6
    record(11, ok, f"gradient rel err={worst:.1e}, energy increases={increases}, max drift={drift:.1e}")


def test_12_determinism(tmp_path):
    cfg = parse_config({**DISK_CFG, "grid": {"n": 128}, "eps": {"final": 0.04}, "isoperimetric": {"alpha": 0.5, "starts": 8}})
    a = run(cfg.model_copy(update={"workers": 1}), tmp_path / "w1")
    b = run(cfg.model_copy(update={"workers": 8}), tmp_path / "w8")
    ok = a.status == "ok" and a.summary_hash == b.summary_hash
    record(12, ok, f"summary hash 1 worker {a.summary_hash[:16]} / 8 workers {b.summary_hash[:16]}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
