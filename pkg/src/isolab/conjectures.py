"""Two-hyperplane margin, hull fraction, cone fit, KLS ratio and the Milman inequality chain."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .convex import ConvexBody, Cone, convex_hull
from .errors import DegenerateInputError, EmptyInterfaceError, PreconditionError
from .field import volume_fraction
from .grid import Grid, ScalarField
from .measure import Density, marginal, measure
from .surface import extract, perimeter

SCAN_DIRECTIONS = 1440
MARGINAL_DIRECTIONS = 360
BALANCED_WINDOW = (0.45, 0.55)
SCHEMA_VERSION = 1


@dataclass
class RegionLabel:
    """``E = {phi > 0}`` on a grid, with per-cell labels taken at cell centers."""

    phi: ScalarField
    density: Density
    alpha: float
    labels: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.labels is None:
            self.labels = self.phi.values > 0
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"region mass {self.alpha} is not in (0, 1)")

    @classmethod
    def from_field(cls, f: ScalarField, density: Density) -> "RegionLabel":
        return cls(f, density, volume_fraction(f, density))

    @classmethod
    def from_function(cls, grid: Grid, density: Density, fn: Callable) -> "RegionLabel":
        """``fn`` maps an ``(..., 2)`` array of points to a signed level function."""
        phi = ScalarField(grid, fn(grid.centers()))
        alpha = measure(density, lambda x: fn(x) > 0, grid) / measure(density, None, grid)
        return cls(phi, density, alpha)

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.labels, dtype=np.uint8).tobytes())
        h.update(json.dumps(self.grid.header(), sort_keys=True).encode())
        h.update(json.dumps(self.density.describe(), sort_keys=True, default=str).encode())
        return h.hexdigest()


@dataclass
class ConjectureReport:
    name: str
    inputs_digest: str
    scalars: dict
    verdict: str  # consistent | violated | indeterminate
    notes: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA_VERSION, "name": self.name, "inputs_digest": self.inputs_digest,
                "scalars": self.scalars, "verdict": self.verdict, "notes": self.notes,
                "provenance": self.provenance}


# -- halfspace masses ---------------------------------------------------------------


def _cut_fraction(s: np.ndarray, a: np.ndarray, h: float) -> np.ndarray:
    """Fraction of the square ``[-h/2, h/2]^2`` where ``a . y >= s``.

    ``a . y`` for uniform y is the sum of two uniforms of widths ``|a1| h`` and
    ``|a2| h``; its distribution function is piecewise quadratic.
    """
    u, v = sorted((abs(a[0]) * h, abs(a[1]) * h), reverse=True)
    t = np.clip(s + 0.5 * (u + v), 0.0, u + v)
    if v < 1e-14 * u:
        below = t / u
    else:
        below = np.where(t <= v, t * t / (2 * u * v),
                         np.where(t <= u, (t - 0.5 * v) / u, 1 - (u + v - t) ** 2 / (2 * u * v)))
    return 1.0 - below


class _HalfspaceMass:
    """``mu({a . x >= c})`` from cell weights with exact square-cut fractions."""

    def __init__(self, density: Density, grid: Grid):
        self.omega = density.cell_weights(grid)
        self.total = float(self.omega.sum())
        keep = self.omega > 0
        self.x = grid.centers()[keep]
        self.w = self.omega[keep]
        self.h = grid.h

    def __call__(self, a: np.ndarray, c: float) -> float:
        s = c - self.x @ a
        return float(np.sum(self.w * _cut_fraction(s, a, self.h)) / self.total)


def _directions(k: int, full: bool = True) -> tuple[np.ndarray, np.ndarray]:
    span = 2 * math.pi if full else math.pi
    th = np.arange(k) * span / k
    return th, np.column_stack([np.cos(th), np.sin(th)])


def two_hyperplane_scan(E: RegionLabel, directions: int = SCAN_DIRECTIONS):
    """Per-direction offsets ``c1, c2`` and margins ``b*(a)``.

    ``c1`` is the least offset with every cell meeting ``{a.x >= c1}`` labeled
    E; ``c2`` the least with every cell meeting ``{a.x <= -c2}`` outside E.  A
    cell meets a halfspace when its footprint does, i.e. when its center is
    within ``(h/2)|a|_1`` of it.
    """
    grid = E.grid
    act = grid.mask > 0
    X = grid.centers()[act]
    lab = E.labels[act]
    hm = _HalfspaceMass(E.density, grid)
    th, A = _directions(directions)
    P = X @ A.T  # cells x directions
    r = 0.5 * grid.h * np.abs(A).sum(axis=1)
    big = np.inf
    outside = ~lab
    c1 = np.where(outside.any(), np.max(np.where(outside[:, None], P, -big), axis=0) + r, -big)
    c2 = np.where(lab.any(), np.max(np.where(lab[:, None], -P, -big), axis=0) + r, -big)
    c = np.maximum(c1, c2)
    lo_support = -np.max(-P, axis=0) - r
    hi_support = np.max(P, axis=0) + r
    b = np.zeros(directions)
    for k in range(directions):
        if c[k] >= hi_support[k]:
            continue
        b[k] = hm(A[k], max(c[k], lo_support[k]))
    return th, A, c1, c2, b


def two_hyperplane_margin(E: RegionLabel, directions: int = SCAN_DIRECTIONS) -> ConjectureReport:
    """Largest mass ``b*`` of a halfspace H with ``H in E`` and ``-H in E^c`` (cellwise)."""
    if not E.density.symmetric:
        raise PreconditionError("two-hyperplane margin needs a symmetric density")
    th, A, c1, c2, b = two_hyperplane_scan(E, directions)
    k = int(np.argmax(b))
    bstar = float(b[k])
    notes = []
    verdict = "consistent" if bstar > 0 else "violated"
    if not BALANCED_WINDOW[0] <= E.alpha <= BALANCED_WINDOW[1]:
        notes.append(f"exploratory: region mass {E.alpha:.4f} is outside {BALANCED_WINDOW}")
        if bstar <= 0:
            verdict = "indeterminate"
    scalars = {"b_star": bstar, "direction": A[k].tolist(), "offset": float(max(c1[k], c2[k])),
               "alpha": E.alpha, "directions": directions}
    return ConjectureReport("two_hyperplane", E.digest(), scalars, verdict, notes,
                            {"grid": E.grid.header(), "density": E.density.describe()})


def hull_fraction(E: RegionLabel, body: ConvexBody) -> ConjectureReport:
    """``mu(hull(E)) / mu(body)`` with the hull taken over centers of E cells."""
    if E.density.kind != "uniform":
        raise PreconditionError("hull fraction is defined for uniform densities on a body")
    grid = E.grid
    pts = grid.centers()[E.labels & (grid.mask > 0)]
    try:
        H = convex_hull(pts)
    except DegenerateInputError:
        return ConjectureReport("hull_fraction", E.digest(), {"hull_fraction": 0.0, "alpha": E.alpha},
                                "indeterminate", ["E has fewer than three affinely independent cells"])
    frac = measure(E.density, lambda x: H.contains(x.reshape(-1, 2)).reshape(x.shape[:-1]), grid)
    frac /= measure(E.density, None, grid)
    tol = 4 * grid.h * _perimeter_bound(body) / body.volume
    notes = []
    if E.alpha > 0.5:
        verdict = "indeterminate"
        notes.append("mass above 1/2: fraction reported without a verdict")
    else:
        verdict = "consistent" if frac < 1 - tol else "violated"
    return ConjectureReport("hull_fraction", E.digest(), {"hull_fraction": float(frac), "alpha": E.alpha,
                                                          "tolerance": tol}, verdict, notes)


def _perimeter_bound(body: ConvexBody) -> float:
    v = body.vertices
    return float(np.sum(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)))


def _cone_mass(density: Density, grid: Grid, axis: np.ndarray, beta: float) -> float:
    cone = Cone(np.zeros(2), axis, beta)

    def pred(x):
        from .convex import cone_contains

        return cone_contains(cone, x.reshape(-1, 2)).reshape(x.shape[:-1])

    return measure(density, pred, grid) / measure(density, None, grid)


def cone_fit(E: RegionLabel, directions: int = SCAN_DIRECTIONS, witness: ConjectureReport | None = None) -> ConjectureReport:
    """Best circular cone Gamma at the origin with ``Gamma in E`` and ``-Gamma in E^c`` (cellwise).

    A cone is feasible when every cell center inside it is labeled E and
    every center inside its reflection is not; the apex cell is ignored.  For
    each axis the largest feasible half-angle is the smallest angular distance
    to an offending center, so no bisection is needed.  The two-hyperplane
    witness halfspace is also a candidate.
    """
    if not E.density.symmetric:
        raise PreconditionError("cone fit needs a symmetric density")
    grid = E.grid
    act = grid.mask > 0
    X = grid.centers()[act]
    lab = E.labels[act]
    rho = np.linalg.norm(X, axis=1)
    far = rho > 1e-12
    X, lab = X[far], lab[far]
    ang = np.arctan2(X[:, 1], X[:, 0])
    th, A = _directions(directions)
    best = (0.0, None, 0.0)
    radial = E.density.kind in ("gaussian", "power_exp")
    betas = np.zeros(directions)
    for k, phi in enumerate(th):
        dpos = np.abs(np.angle(np.exp(1j * (ang - phi))))
        dneg = math.pi - dpos
        lim1 = np.min(dpos[~lab]) if (~lab).any() else math.pi / 2
        lim2 = np.min(dneg[lab]) if lab.any() else math.pi / 2
        betas[k] = max(min(lim1, lim2, math.pi / 2) - 1e-12, 0.0)
    if radial:
        k = int(np.argmax(betas))
        if betas[k] > 0:
            best = (betas[k] / math.pi, A[k], float(betas[k]))
    else:
        for k in np.argsort(-betas)[:8]:
            if betas[k] <= 0:
                break
            m = _cone_mass(E.density, grid, A[k], float(betas[k]))
            if m > best[0]:
                best = (m, A[k], float(betas[k]))
    scalars = {"cone_mass": float(best[0]), "axis": None if best[1] is None else best[1].tolist(),
               "half_angle": best[2], "kind": "cone"}
    if witness is None:
        witness = two_hyperplane_margin(E, directions)
    wb = witness.scalars["b_star"]
    if wb > scalars["cone_mass"]:
        scalars.update({"cone_mass": wb, "axis": witness.scalars["direction"], "half_angle": math.pi / 2,
                        "kind": "halfspace", "offset": witness.scalars["offset"]})
    if scalars["cone_mass"] + 1e-12 < wb:
        raise AssertionError("cone fit lost the feasible witness halfspace")
    verdict = "consistent" if scalars["cone_mass"] > 0 else "violated"
    return ConjectureReport("cone_fit", E.digest(), scalars, verdict)


def min_cut_density(d: Density, directions: int = MARGINAL_DIRECTIONS) -> tuple[float, np.ndarray, np.ndarray]:
    """``min_a w_a(0)`` over directions in [0, pi); also returns the per-direction values."""
    th, A = _directions(directions, full=False)
    vals = np.array([marginal(d, a, [0.0]).values[0] for a in A])
    return float(vals.min()), A[int(np.argmin(vals))], vals


def interface_perimeter(E: RegionLabel) -> float:
    S = extract(E.phi, 0.0)
    return perimeter(S, E.density)


def kls_check(E: RegionLabel, two_hyp: ConjectureReport | None = None, tol: float = 1e-3) -> ConjectureReport:
    """Weighted perimeter against the least hyperplane cut and the Milman lower bound."""
    if not E.density.symmetric:
        raise PreconditionError("KLS check needs a symmetric density")
    two_hyp = two_hyp or two_hyperplane_margin(E)
    bstar = two_hyp.scalars["b_star"]
    try:
        P = interface_perimeter(E)
    except EmptyInterfaceError:
        return ConjectureReport("kls", E.digest(), {}, "indeterminate", ["no interface"])
    wmin, amin, _ = min_cut_density(E.density)
    a_star = np.asarray(two_hyp.scalars["direction"])
    w_star = marginal(E.density, a_star, [0.0]).values[0]
    scalars = {"perimeter": P, "min_cut": wmin, "kls_ratio": P / wmin, "b_star": bstar, "w_star": float(w_star)}
    if bstar <= 0:
        return ConjectureReport("kls", E.digest(), scalars, "indeterminate", ["b* = 0: bound is vacuous"])
    bound = w_star / (4 * math.log(1 / bstar))
    ok = P >= bound - tol
    scalars.update({"bound": bound, "bound_ok": bool(ok)})
    return ConjectureReport("kls", E.digest(), scalars, "consistent" if ok else "violated")


def milman_chain_check(E: RegionLabel, two_hyp: ConjectureReport | None = None, minimizer: bool = True,
                       tol: float = 1e-6, t_grid=None) -> ConjectureReport:
    """The halfspace-gap chain ``w_a(0) L <= log(1/b*)`` and ``L P_mu >= 1/4``.

    L is the distance between the two witness halfspaces moved so that each
    carries mass ``b*/2``.  The dilation growth ``mu(E_t minus E)`` is
    reported for ``t_grid``.
    """
    two_hyp = two_hyp or two_hyperplane_margin(E)
    bstar = two_hyp.scalars["b_star"]
    if not 0 < bstar <= 0.5 + 1e-12:
        return ConjectureReport("milman_chain", E.digest(), {"b_star": bstar}, "indeterminate",
                                ["b* outside (0, 1/2]"])
    bstar = min(bstar, 0.5)
    a = np.asarray(two_hyp.scalars["direction"])
    m = marginal(E.density, a, [0.0])
    c = m.quantile_offset(bstar / 2)
    c_neg = -marginal(E.density, -a, [0.0]).quantile_offset(bstar / 2)
    L = c - c_neg
    w0 = m.at_zero
    P = interface_perimeter(E)
    lhs1, rhs1 = w0 * L, math.log(1 / bstar)
    lhs2 = L * P
    ok1 = lhs1 <= rhs1 + tol
    ok2 = lhs2 >= 0.25 - tol
    scalars = {"b_star": bstar, "L": L, "w_a0": w0, "gap_lhs": lhs1, "gap_rhs": rhs1,
               "gap_slack": (rhs1 - lhs1) / rhs1, "LP": lhs2, "LP_slack": (lhs2 - 0.25) / 0.25,
               "perimeter": P, "gap_ok": bool(ok1), "LP_ok": bool(ok2)}
    notes = []
    if t_grid is not None:
        scalars["dilation"] = dilation_growth(E, t_grid)
    if not ok1:
        verdict = "violated"
    elif not ok2:
        verdict = "violated" if minimizer else "indeterminate"
        if not minimizer:
            notes.append("L P >= 1/4 only claimed for minimizers")
    else:
        verdict = "consistent"
    return ConjectureReport("milman_chain", E.digest(), scalars, verdict, notes)


def dilation_growth(E: RegionLabel, t_grid) -> list:
    """``mu(E_t minus E)`` for Euclidean dilations ``E_t`` of the labeled cells."""
    grid = E.grid
    dist = ndimage.distance_transform_edt(~E.labels) * grid.h
    omega = E.density.cell_weights(grid)
    total = omega.sum()
    return [[float(t), float(np.sum(omega[(dist > 0) & (dist <= t)]) / total)] for t in t_grid]
