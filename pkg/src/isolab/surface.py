"""Interfaces (2D polylines) and their discrete geometry."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from skimage import measure as skmeasure

from .convex import ConvexBody
from .errors import ClassificationError, DimensionError, EmptyInterfaceError
from .grid import ScalarField
from .measure import Density

GRAPH_DIRECTIONS = 720
CONTACT_REACH = 2.0  # endpoints within this many h of the boundary count as contact points
CURVATURE_COLLAR = 1.5  # vertices this many h from the boundary are left out of curvature statistics
LEVEL_COLLAR = 3.0  # wider collar for level-set curvature: its stencil reaches two cells further


@dataclass
class Interface:
    """Polyline interface with unit normals pointing out of E.

    ``components`` lists vertex indices of each connected piece in order;
    ``closed[i]`` says whether piece i is a loop.  ``level_curvature`` holds
    ``div(nu)`` sampled from the level-set function when the interface was
    extracted from a field (None for analytic polylines).
    """

    vertices: np.ndarray
    normals: np.ndarray
    components: list
    closed: list
    boundary_vertices: np.ndarray
    h: float | None = None
    level_curvature: np.ndarray | None = None
    body: ConvexBody | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.normals = np.asarray(self.normals, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise DimensionError("only planar interfaces are supported")
        norms = np.linalg.norm(self.normals, axis=1)
        if np.any(np.abs(norms - 1) > 1e-9):
            raise ValueError("interface normals must be unit vectors")
        self.boundary_vertices = np.asarray(self.boundary_vertices, dtype=int)

    dim = 2

    @property
    def segments(self) -> np.ndarray:
        segs = []
        for comp, closed in zip(self.components, self.closed):
            comp = np.asarray(comp)
            s = np.column_stack([comp[:-1], comp[1:]])
            if closed:
                s = np.vstack([s, [comp[-1], comp[0]]])
            segs.append(s)
        return np.vstack(segs) if segs else np.zeros((0, 2), dtype=int)

    @property
    def connected(self) -> bool:
        return len(self.components) == 1

    def lengths(self) -> np.ndarray:
        s = self.segments
        return np.linalg.norm(self.vertices[s[:, 1]] - self.vertices[s[:, 0]], axis=1)

    def length(self) -> float:
        return float(self.lengths().sum())

    def vertex_lengths(self) -> np.ndarray:
        """Half the length of the segments incident to each vertex (dual cell length)."""
        s = self.segments
        ell = self.lengths()
        out = np.zeros(len(self.vertices))
        np.add.at(out, s[:, 0], 0.5 * ell)
        np.add.at(out, s[:, 1], 0.5 * ell)
        return out

    # -- construction -------------------------------------------------

    @classmethod
    def from_polyline(cls, points, closed: bool = False, normals=None, body: ConvexBody | None = None,
                      boundary_vertices=None, h: float | None = None) -> "Interface":
        """Interface from ordered points; default normals are the right-hand normals of the tangent."""
        pts = np.asarray(points, dtype=float)
        if normals is None:
            t = _vertex_tangents(pts, closed)
            normals = np.column_stack([t[:, 1], -t[:, 0]])
        else:
            normals = np.asarray(normals, dtype=float)
            normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        if boundary_vertices is None:
            boundary_vertices = [] if closed else [0, len(pts) - 1]
        return cls(pts, normals, [np.arange(len(pts))], [closed], np.asarray(boundary_vertices, dtype=int), h=h, body=body)

    def to_dict(self) -> dict:
        return {"vertices": len(self.vertices), "components": len(self.components),
                "closed": list(map(bool, self.closed)), "boundary_vertices": self.boundary_vertices.tolist(),
                "length": self.length(), "h": self.h}

    def dump(self, path) -> tuple[Path, Path]:
        """CSV of vertices and normals plus a JSON topology sidecar."""
        path = Path(path)
        csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "y", "nx", "ny"])
            for v, n in zip(self.vertices, self.normals):
                wr.writerow([repr(float(c)) for c in (*v, *n)])
        topo = {"components": [np.asarray(c).tolist() for c in self.components],
                "closed": list(map(bool, self.closed)),
                "boundary_vertices": self.boundary_vertices.tolist(), "h": self.h}
        json_path.write_text(json.dumps(topo))
        return csv_path, json_path


def _vertex_tangents(pts: np.ndarray, closed: bool) -> np.ndarray:
    if closed:
        t = np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0)
    else:
        t = np.empty_like(pts)
        t[1:-1] = pts[2:] - pts[:-2]
        t[0] = pts[1] - pts[0]
        t[-1] = pts[-1] - pts[-2]
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def _fill_inactive(values: np.ndarray, active: np.ndarray) -> np.ndarray:
    if active.all():
        return values
    idx = ndimage.distance_transform_edt(~active, return_distances=False, return_indices=True)
    return values[tuple(idx)]


def _dedupe(path: np.ndarray, closed: bool, tol: float) -> np.ndarray:
    keep = np.ones(len(path), dtype=bool)
    last = path[0]
    for i in range(1, len(path)):
        if np.linalg.norm(path[i] - last) <= tol:
            keep[i] = False
        else:
            last = path[i]
    out = path[keep]
    if closed and len(out) > 1 and np.linalg.norm(out[-1] - out[0]) <= tol:
        out = out[:-1]
    return out


def extract(f: ScalarField, level: float = 0.0, body: ConvexBody | None = None) -> Interface:
    """Piecewise-linear level set ``{f = level}`` over the active cells of the grid.

    Open pieces ending within ``2h`` of the body boundary are extended along
    their last segment until they hit it.  Normals are ``-grad f / |grad f|``
    (pointing out of ``{f > level}``).
    """
    grid = f.grid
    if grid.dim != 2:
        raise DimensionError("extraction is implemented for planar grids")
    body = body if body is not None else grid.body
    active = grid.mask > 0
    vals = _fill_inactive(f.values, active)
    if not (np.any(vals[active] > level) and np.any(vals[active] < level)):
        raise EmptyInterfaceError("field does not change sign on the active cells")
    # partially covered cells carry little weight, so their values are loosely
    # determined; trace through well-covered cells and extend to the boundary
    paths = skmeasure.find_contours(vals, level, mask=grid.mask >= 0.5)
    h = grid.h
    to_xy = lambda idx: grid.origin + (idx + 0.5) * h  # noqa: E731

    gx, gy = np.gradient(vals, h)
    axes = grid.axes()
    interp = lambda a: RegularGridInterpolator(axes, a, bounds_error=False, fill_value=None)  # noqa: E731
    gi = [interp(gx), interp(gy)]
    mag = np.hypot(gx, gy)
    safe = np.where(mag > 0, mag, 1.0)
    nx, ny = gx / safe, gy / safe
    div = np.gradient(nx, h, axis=0) + np.gradient(ny, h, axis=1)
    ki = interp(div)

    verts, comps, closed_flags, bverts = [], [], [], []
    offset = 0
    for path in paths:
        xy = to_xy(path)
        closed = bool(len(xy) > 2 and np.allclose(xy[0], xy[-1], atol=1e-12))
        xy = _dedupe(xy, closed, 1e-12 * h)
        if len(xy) < 2:
            continue
        if not closed and body is not None:
            xy = _extend_to_boundary(xy, body, CONTACT_REACH * h)
        n = len(xy)
        comps.append(np.arange(offset, offset + n))
        closed_flags.append(closed)
        if not closed:
            for end in (0, n - 1):
                bverts.append(offset + end)
        verts.append(xy)
        offset += n
    if not verts:
        raise EmptyInterfaceError("level set has no usable pieces")
    V = np.vstack(verts)
    g = np.column_stack([gi[0](V), gi[1](V)])
    gn = np.linalg.norm(g, axis=1, keepdims=True)
    if np.any(gn == 0):
        raise EmptyInterfaceError("vanishing gradient on the level set")
    normals = -g / gn
    # curvature of the level set, evaluated for E = {f > level}
    kappa = -ki(V)
    return Interface(V, normals, comps, closed_flags, np.asarray(bverts, dtype=int), h=h,
                     level_curvature=kappa, body=body, meta={"level": level})


def _extend_to_boundary(xy: np.ndarray, body: ConvexBody, reach: float) -> np.ndarray:
    out = [xy]
    for end, prev in ((0, 1), (-1, -2)):
        p = xy[end]
        d = p - xy[prev]
        nd = np.linalg.norm(d)
        if nd == 0:
            continue
        d = d / nd
        dist = float(body.boundary_distance(p[None, :])[0])
        if dist <= 0 or dist > reach:
            continue
        t = body.ray_exit(p, d)
        if 0 < t <= 2 * reach:
            q = p + t * d
            if end == 0:
                out.insert(0, q[None, :])
            else:
                out.append(q[None, :])
    return np.vstack(out)


# -- measurements -----------------------------------------------------------


def _weight(d: Density | None, x: np.ndarray) -> np.ndarray:
    if d is None:
        return np.ones(len(x))
    if d.kind == "uniform":
        return np.full(len(x), 1.0 / d.Z)
    return d.pdf(x)


def perimeter(S: Interface, d: Density | None = None) -> float:
    """Sum over segments of length times the density at the midpoint (weight 1 when d is None)."""
    s = S.segments
    a, b = S.vertices[s[:, 0]], S.vertices[s[:, 1]]
    ell = np.linalg.norm(b - a, axis=1)
    return float(np.sum(ell * _weight(d, 0.5 * (a + b))))


def circumcircle_curvature(S: Interface) -> np.ndarray:
    """Signed curvature ``div(nu)`` from the circle through each vertex and its two neighbours."""
    V = S.vertices
    out = np.zeros(len(V))
    for comp, closed in zip(S.components, S.closed):
        comp = np.asarray(comp)
        n = len(comp)
        if n < 3:
            raise ValueError("curvature needs at least 3 vertices per component")
        P = V[comp]
        if closed:
            prev, nxt = np.roll(P, 1, axis=0), np.roll(P, -1, axis=0)
            idx = np.arange(n)
        else:
            prev, nxt = P[:-2], P[2:]
            P = P[1:-1]
            idx = np.arange(1, n - 1)
        a = P - prev
        b = nxt - P
        c = nxt - prev
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        k = 2 * cross / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) * np.linalg.norm(c, axis=1))
        t = c / np.linalg.norm(c, axis=1, keepdims=True)
        left = np.column_stack([-t[:, 1], t[:, 0]])
        # curvature vector k * left; mean curvature with respect to nu is -k_vec . nu
        H = -k * np.sum(left * S.normals[comp[idx]], axis=1)
        vals = np.empty(n)
        vals[idx] = H
        if not closed:
            vals[0], vals[-1] = vals[1], vals[-2]
        out[comp] = vals
    return out


@dataclass
class CurvatureData:
    H: np.ndarray
    A2: np.ndarray
    H_mu: np.ndarray
    interior: np.ndarray  # vertices used for statistics (outside the contact collar)

    def constancy(self) -> dict:
        """Spread of the weighted mean curvature over interior vertices."""
        v = self.H_mu[self.interior]
        if v.size == 0:
            return {"mean": math.nan, "std": math.nan, "mean_abs": math.nan}
        return {"mean": float(v.mean()), "std": float(v.std()), "mean_abs": float(np.abs(v).mean())}


def curvature(S: Interface, d: Density | None = None, method: str | None = None) -> CurvatureData:
    """Mean curvature ``H_S``, ``|A_S|^2`` and weighted curvature ``H_S - nu . grad V``.

    ``method`` is ``"level"`` (level-set curvature, default for extracted
    interfaces) or ``"circle"`` (circumcircle through neighbouring vertices).
    """
    for comp in S.components:
        if len(comp) < 3:
            raise ValueError("curvature needs at least 3 vertices per component")
    if method is None:
        method = "level" if S.level_curvature is not None else "circle"
    H = S.level_curvature.copy() if method == "level" else circumcircle_curvature(S)
    if d is None or d.kind == "uniform":
        gV = np.zeros_like(S.vertices)
    else:
        gV = d.grad_V(S.vertices)
    H_mu = H - np.sum(S.normals * gV, axis=1)
    interior = np.ones(len(S.vertices), dtype=bool)
    if S.body is not None and S.h is not None:
        collar = LEVEL_COLLAR if method == "level" else CURVATURE_COLLAR
        interior &= S.body.boundary_distance(S.vertices) > collar * S.h
    return CurvatureData(H, H ** 2, H_mu, interior)


def _end_tangent(S: Interface, v: int, reach: float) -> np.ndarray:
    """Least-squares tangent through the vertices within ``reach`` of endpoint ``v``."""
    comp = next(np.asarray(c) for c in S.components if v in c)
    pts = S.vertices[comp]
    if comp[0] != v:
        pts = pts[::-1]
    dist = np.linalg.norm(pts - pts[0], axis=1)
    near = pts[dist <= reach]
    if len(near) < 2:
        near = pts[:2]
    centered = near - near.mean(axis=0)
    _, _, vt = np.linalg.svd(centered)
    return vt[0]


def contact_angle(S: Interface, body: ConvexBody, reach: float | None = None) -> np.ndarray:
    """Angle in degrees between S and the boundary tangent at each boundary vertex."""
    if S.boundary_vertices.size == 0:
        raise ClassificationError("interface has no boundary vertices")
    h = S.h if S.h is not None else 0.01 * max(np.ptp(S.vertices, axis=0))
    reach = reach if reach is not None else 4 * h
    out = []
    for v in S.boundary_vertices:
        p = S.vertices[v]
        dist = abs(float(body.boundary_distance(p[None, :])[0]))
        if dist > CONTACT_REACH * h:
            raise ClassificationError(f"endpoint {p} is {dist:.3g} from the boundary (more than 2h)")
        t = _end_tangent(S, v, reach)
        n = body.boundary_normal(p[None, :])[0]
        # angle to the boundary tangent = 90 deg minus angle to the boundary normal
        c = min(1.0, abs(float(t @ n)))
        out.append(math.degrees(math.asin(c)))
    return np.array(out)


@dataclass
class GraphFit:
    direction: np.ndarray
    lipschitz: float
    is_graph: bool
    scan: np.ndarray  # (directions, L) pairs


def graph_fit(S: Interface, directions: int = GRAPH_DIRECTIONS) -> GraphFit:
    """Best direction ``a`` over which S is a graph ``x.a = psi(x.b)``, ``b`` perpendicular to a.

    Scans ``directions`` angles in [0, pi); S is a graph over ``a``-perp when the
    projected coordinate is strictly monotone along every ordered piece.
    """
    thetas = np.arange(directions) * math.pi / directions
    L = np.full(directions, np.inf)
    pieces = []
    for comp, closed in zip(S.components, S.closed):
        comp = np.asarray(comp)
        if closed:
            return GraphFit(np.array([0.0, 1.0]), math.inf, False, np.column_stack([thetas, L]))
        pieces.append(S.vertices[comp])
    for k, th in enumerate(thetas):
        a = np.array([math.cos(th), math.sin(th)])
        b = np.array([-a[1], a[0]])
        us, worst = [], 0.0
        ok = True
        for P in pieces:
            u = P @ b
            ht = P @ a
            du, dh = np.diff(u), np.diff(ht)
            if not (np.all(du > 0) or np.all(du < 0)):
                ok = False
                break
            worst = max(worst, float(np.max(np.abs(dh) / np.abs(du))))
            us.append((u.min(), u.max()))
        if ok and len(us) > 1:
            us.sort()
            ok = all(us[i][1] < us[i + 1][0] for i in range(len(us) - 1))
        if ok:
            L[k] = worst
    best = int(np.argmin(L))
    th = thetas[best]
    return GraphFit(np.array([math.cos(th), math.sin(th)]), float(L[best]), bool(np.isfinite(L[best])),
                    np.column_stack([thetas, L]))


def intrinsic_extrinsic_ratio(S: Interface, sample_pairs=None, max_sources: int = 200,
                              rng: np.random.Generator | None = None) -> dict:
    """Largest ratio of path distance along S to straight-line distance.

    ``sample_pairs`` is None (all pairs among up to ``max_sources`` vertices),
    an integer count of random pairs, or an explicit list of vertex-index pairs.
    """
    V = S.vertices
    s = S.segments
    ell = np.linalg.norm(V[s[:, 1]] - V[s[:, 0]], axis=1)
    n = len(V)
    G = coo_matrix((np.concatenate([ell, ell]), (np.concatenate([s[:, 0], s[:, 1]]), np.concatenate([s[:, 1], s[:, 0]]))),
                   shape=(n, n)).tocsr()
    ncomp, labels = connected_components(G, directed=False)
    rng = rng or np.random.default_rng(0)
    if sample_pairs is None:
        src = np.unique(np.linspace(0, n - 1, min(n, max_sources)).astype(int))
        pairs = None
    elif isinstance(sample_pairs, int):
        pairs = rng.integers(0, n, size=(sample_pairs, 2))
        src = np.unique(pairs[:, 0])
    else:
        pairs = np.asarray(sample_pairs, dtype=int)
        src = np.unique(pairs[:, 0])
    D = dijkstra(G, directed=False, indices=src)
    row = {v: i for i, v in enumerate(src)}
    per = np.zeros(ncomp)
    min_sep = 1e-9 * max(np.ptp(V, axis=0).max(), 1e-300)
    if pairs is None:
        pairs = np.array([(i, j) for i in src for j in src if i < j])
    for i, j in pairs:
        if labels[i] != labels[j] or i == j:
            continue
        e = np.linalg.norm(V[i] - V[j])
        if e <= min_sep:
            continue
        r = D[row[i], j] / e
        per[labels[i]] = max(per[labels[i]], r)
    return {"ratio": float(per.max()) if per.size else math.nan, "per_component": per.tolist(),
            "disconnected": bool(ncomp > 1)}


def cone_constant(S: Interface, direction, center=None, k_min: float | None = None) -> float:
    """``max |height| / |base|`` over vertices, heights along ``direction`` measured from ``center``.

    A measured stand-in for the linear-growth constant M of a graph; descriptive only.
    """
    a = np.asarray(direction, dtype=float)
    a = a / np.linalg.norm(a)
    b = np.array([-a[1], a[0]])
    c = np.zeros(2) if center is None else np.asarray(center, dtype=float)
    X = S.vertices - c
    u, ht = np.abs(X @ b), np.abs(X @ a)
    if k_min is None:
        k_min = 0.1 * u.max()
    sel = u >= k_min
    if not sel.any():
        return math.nan
    return float(np.max(ht[sel] / u[sel]))


def hausdorff_to_line(S: Interface, body: ConvexBody | None = None, through=None, directions: int = 1440):
    """Smallest Hausdorff distance from S to a chord ``{x.n = c}`` of the body.

    With ``through`` given, only lines through that point are considered.  The
    chord is sampled densely so both directions of the distance are measured.
    Returns ``(distance, normal, offset)``.
    """
    from scipy.spatial import cKDTree

    body = body or S.body
    V = S.vertices
    tree_S = cKDTree(_densify(S, 0.25 * (S.h or 0.01)))
    best = (math.inf, None, None)
    for th in np.arange(directions) * math.pi / directions:
        n = np.array([math.cos(th), math.sin(th)])
        c = float(n @ np.asarray(through)) if through is not None else float(np.median(V @ n))
        one = float(np.max(np.abs(V @ n - c)))
        if one >= best[0]:
            continue
        chord = _chord(body, n, c, 0.25 * (S.h or 0.01))
        if chord is None:
            continue
        other = float(tree_S.query(chord)[0].max())
        d = max(one, other)
        if d < best[0]:
            best = (d, n, c)
    return best


def _densify(S: Interface, step: float) -> np.ndarray:
    out = [S.vertices]
    s = S.segments
    for i, j in s:
        a, b = S.vertices[i], S.vertices[j]
        k = int(np.ceil(np.linalg.norm(b - a) / step))
        if k > 1:
            t = np.linspace(0, 1, k + 1)[1:-1, None]
            out.append(a + t * (b - a))
    return np.vstack(out)


def _chord(body: ConvexBody, n: np.ndarray, c: float, step: float):
    if body is None:
        return None
    tdir = np.array([-n[1], n[0]])
    p0 = c * n
    if not body.contains(p0[None, :])[0]:
        return None
    t1 = body.ray_exit(p0, tdir)
    t0 = body.ray_exit(p0, -tdir)
    k = max(2, int(np.ceil((t0 + t1) / step)))
    ts = np.linspace(-t0, t1, k)
    return p0 + ts[:, None] * tdir
