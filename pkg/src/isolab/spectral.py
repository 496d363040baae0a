"""First nonconstant Neumann eigenfunctions on planar convex bodies and hot-spots diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import eigsh

from .convex import ConvexBody
from .errors import DegenerateInputError, DimensionError, EmptyInterfaceError, ResolutionError
from .grid import Grid, ScalarField
from .surface import Interface, extract, graph_fit

DEGENERACY_TOL = 1e-6
MONOTONE_DIRECTIONS = 720
MIN_CELLS_SPECTRAL = 64
APERTURE_SAMPLES = 16


@dataclass
class EigenResult:
    eigenvalue: float
    u: ScalarField
    residual: float
    degenerate: bool = False
    index: int = 1


def face_apertures(body: ConvexBody, grid: Grid, samples: int = APERTURE_SAMPLES) -> list[np.ndarray]:
    """Fraction of each interior cell face lying inside the body (one array per axis)."""
    out = []
    offs = (np.arange(samples) + 0.5) / samples - 0.5
    c = grid.centers()
    for k in range(grid.dim):
        lo = [slice(None)] * grid.dim
        lo[k] = slice(None, -1)
        mid = c[tuple(lo)].copy()
        mid[..., k] += 0.5 * grid.h
        other = 1 - k
        frac = np.zeros(mid.shape[:-1])
        for o in offs:
            p = mid.copy()
            p[..., other] += o * grid.h
            frac += body.contains(p.reshape(-1, 2)).reshape(frac.shape)
        out.append(frac / samples)
    return out


def neumann_operator(body: ConvexBody, grid: Grid):
    """Cut-cell finite-volume Neumann Laplacian: ``(K, mass, cells)``.

    Unknowns live on cells with positive inside fraction.  Each face between
    two such cells contributes ``aperture * (u_i - u_j)^2``; faces crossing the
    boundary are shortened to their inside part and nothing flows through the
    boundary itself.  ``mass`` is the cell area inside the body.
    """
    if grid.dim != 2:
        raise DimensionError("Neumann solver is planar")
    active = grid.mask > 0
    ids = -np.ones(grid.shape, dtype=int)
    ids[active] = np.arange(active.sum())
    aps = face_apertures(body, grid)
    rows, cols, vals = [], [], []
    for k, ap in enumerate(aps):
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[k] = slice(None, -1)
        hi[k] = slice(1, None)
        i, j = ids[tuple(lo)], ids[tuple(hi)]
        ok = (i >= 0) & (j >= 0) & (ap > 0)
        i, j, a = i[ok], j[ok], ap[ok]
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        vals += [a, a, -a, -a]
    n = int(active.sum())
    K = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsc()
    mass = grid.mask[active] * grid.cell_volume
    return K, mass, active


def solve_neumann(body: ConvexBody, grid: Grid | None = None, k: int = 1, n: int = 256) -> list[EigenResult]:
    """First ``k`` nonconstant Neumann eigenpairs, sorted by eigenvalue.

    Eigenfunctions are normalized to ``int u^2 = 1`` and ``int u = 0``.  When
    the first two eigenvalues agree to ``1e-6`` relative both results are
    flagged degenerate and the pair is rotated so the first has the largest
    ``int x_1 u`` (the second is orthogonal to it).
    """
    if body.dim != 2:
        raise DimensionError("Neumann solver is planar")
    grid = grid or Grid.covering(body, n)
    if min(grid.shape) < MIN_CELLS_SPECTRAL and max(grid.shape) < MIN_CELLS_SPECTRAL:
        raise ResolutionError("need at least 64 cells across the body")
    K, mass, active = neumann_operator(body, grid)
    M = sparse.diags(mass).tocsc()
    want = max(k, 2) + 1
    v0 = np.cos(np.arange(K.shape[0]) * 0.7071) + 1.0
    w, V = eigsh(K, k=want, M=M, sigma=-1.0, which="LM", v0=v0, tol=1e-12)
    order = np.argsort(w)
    w, V = w[order], V[:, order]
    # the first pair is the constant mode
    w, V = w[1:], V[:, 1:]
    total = mass.sum()
    results = []
    X = grid.centers()[active]
    for i in range(len(w)):
        u = V[:, i]
        u = u - np.sum(mass * u) / total
        u = u / math.sqrt(np.sum(mass * u * u))
        V[:, i] = u
    degenerate = len(w) > 1 and abs(w[1] - w[0]) / w[0] < DEGENERACY_TOL
    if degenerate:
        c = np.array([np.sum(mass * X[:, 0] * V[:, 0]), np.sum(mass * X[:, 0] * V[:, 1])])
        nc = np.linalg.norm(c)
        if nc > 0:
            c = c / nc
            a = c[0] * V[:, 0] + c[1] * V[:, 1]
            b = -c[1] * V[:, 0] + c[0] * V[:, 1]
            V[:, 0], V[:, 1] = a, b
    for i in range(min(k if not degenerate else max(k, 2), len(w))):
        u = V[:, i]
        # fix the sign: positive moment along x1, else along x2
        mom = X.T @ (mass * u)
        s = mom[0] if abs(mom[0]) > 1e-9 * np.abs(mom).max() else mom[1]
        if s < 0:
            u = -u
        r = K @ u - w[i] * mass * u
        res = float(np.sqrt(np.sum(r ** 2 / mass)))
        vals = np.zeros(grid.shape)
        vals[active] = u
        results.append(EigenResult(float(w[i]), ScalarField(grid, vals, {"eigenvalue": float(w[i])}), res,
                                   bool(degenerate and i < 2), i + 1))
    return results


def integrate(u: ScalarField) -> float:
    return float(np.sum(u.values * u.grid.mask) * u.grid.cell_volume)


@dataclass
class HotSpotsReport:
    argmax: np.ndarray
    argmin: np.ndarray
    max_boundary_distance: float
    min_boundary_distance: float
    direction: np.ndarray
    margin: float
    collar: float
    nodal: Interface | None = None
    nodal_direction: np.ndarray | None = None
    nodal_lipschitz: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def monotone(self) -> bool:
        return self.margin > 0

    def to_dict(self) -> dict:
        return {"argmax": self.argmax.tolist(), "argmin": self.argmin.tolist(),
                "extrema_boundary_distance": [self.max_boundary_distance, self.min_boundary_distance],
                "direction": self.direction.tolist(), "margin": self.margin, "collar": self.collar,
                "lipschitz": self.nodal_lipschitz,
                "nodal_direction": None if self.nodal_direction is None else self.nodal_direction.tolist()}


def monotone_scan(e: EigenResult, body: ConvexBody, directions: int = MONOTONE_DIRECTIONS,
                  collar: float | None = None):
    """For each direction a, ``min a . grad u`` over cells deeper than the collar.

    The gradient (central differences) is scaled so its largest magnitude over
    those cells is 1.  Returns ``(angles, margins, collar)``.
    """
    grid = e.u.grid
    collar = 2 * grid.h if collar is None else collar
    gx, gy = np.gradient(e.u.values, grid.h)
    depth = body.boundary_distance(grid.centers().reshape(-1, 2)).reshape(grid.shape)
    inner = (depth > collar) & (grid.mask == 1)
    # central differences need both neighbours inside the body
    G = np.column_stack([gx[inner], gy[inner]])
    G = G / np.max(np.linalg.norm(G, axis=1))
    th = np.arange(directions) * 2 * math.pi / directions
    A = np.column_stack([np.cos(th), np.sin(th)])
    margins = (G @ A.T).min(axis=0)
    return th, margins, collar


def hot_spots_check(e: EigenResult, body: ConvexBody, directions: int = MONOTONE_DIRECTIONS,
                    collar: float | None = None, nodal: bool = True) -> HotSpotsReport:
    grid = e.u.grid
    active = grid.mask > 0
    C = grid.centers()
    vals = np.where(active, e.u.values, np.nan)
    imax = np.unravel_index(np.nanargmax(vals), vals.shape)
    imin = np.unravel_index(np.nanargmin(vals), vals.shape)
    pmax, pmin = C[imax], C[imin]
    dmax = float(max(body.boundary_distance(pmax[None, :])[0], 0.0))
    dmin = float(max(body.boundary_distance(pmin[None, :])[0], 0.0))
    th, margins, collar = monotone_scan(e, body, directions, collar)
    best = int(np.argmax(margins))
    a = np.array([math.cos(th[best]), math.sin(th[best])])
    rep = HotSpotsReport(pmax, pmin, dmax, dmin, a, float(margins[best]), collar,
                         meta={"eigenvalue": e.eigenvalue, "degenerate": e.degenerate})
    if nodal:
        S, fit = nodal_set(e, body)
        rep.nodal, rep.nodal_direction, rep.nodal_lipschitz = S, fit.direction, fit.lipschitz
    return rep


def nodal_set(e: EigenResult, body: ConvexBody | None = None):
    """Zero level set of the eigenfunction and its best graph fit."""
    try:
        S = extract(e.u, 0.0, body=body)
    except EmptyInterfaceError as err:
        raise EmptyInterfaceError("eigenfunction has no nodal set; the solver did not converge") from err
    return S, graph_fit(S)


def interpolate_bodies(body0: ConvexBody, body1: ConvexBody, t: float, directions: int = 720) -> ConvexBody:
    """Body with support function ``(1 - t) h0 + t h1`` sampled on ``directions`` normals."""
    th = np.arange(directions) * 2 * math.pi / directions
    A = np.column_stack([np.cos(th), np.sin(th)])
    h = (1 - t) * body0.support_many(A) + t * body1.support_many(A)
    try:
        return ConvexBody(-A, -h, symmetric=body0.symmetric and body1.symmetric,
                          shape={"kind": "support_interpolation", "t": t})
    except Exception as err:  # qhull or empty-interior failures
        raise DegenerateInputError(f"support-function interpolant at t={t} could not be reconstructed") from err


def deform_family(body0: ConvexBody, body1: ConvexBody, steps: int = 10, n: int = 128) -> dict:
    """Solve along the support-function path from body0 to body1 and track margin and nodal L."""
    if not (body0.symmetric and body1.symmetric):
        raise ValueError("deformation endpoints must be symmetric bodies")
    rows = []
    first_bad = None
    for t in np.linspace(0.0, 1.0, steps + 1):
        body = interpolate_bodies(body0, body1, float(t))
        e = solve_neumann(body, n=n, k=1)[0]
        rep = hot_spots_check(e, body)
        row = {"t": float(t), "lambda": e.eigenvalue, "margin": rep.margin, "direction": rep.direction.tolist(),
               "lipschitz": rep.nodal_lipschitz,
               "extrema_boundary_distance": [rep.max_boundary_distance, rep.min_boundary_distance],
               "degenerate": e.degenerate}
        rows.append(row)
        if first_bad is None and rep.margin <= 0:
            first_bad = float(t)
    return {"steps": rows, "first_nonpositive_margin": first_bad}
