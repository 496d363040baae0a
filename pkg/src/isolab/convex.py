"""Convex bodies stored as halfspace intersections, cones and hulls.

A body is ``{x : A x >= c}`` with unit rows in ``A``.  Smooth bodies (disk,
ellipse) are regular polygons with ``m`` facets, but they also remember their
analytic shape so boundary normals and curvatures can be evaluated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from .errors import DegenerateInputError, DimensionError, IsolabError

UNIT_TOL = 1e-12
SYMMETRY_TOL = 1e-9
CONTAINS_MARGIN = 1e-12
DEFAULT_FACETS = 256


@dataclass(frozen=True)
class Halfspace:
    """``{x : normal . x >= offset}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(normal) - 1.0) > UNIT_TOL:
            raise ValueError(f"halfspace normal must be unit length, got |n|={np.linalg.norm(normal)!r}")
        normal.setflags(write=False)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    def contains(self, x) -> bool:
        return float(self.normal @ np.asarray(x, dtype=float)) >= self.offset - CONTAINS_MARGIN


@dataclass(frozen=True)
class Cone:
    """Open circular cone ``{x != apex : angle(x - apex, axis) <= half_angle}``."""

    apex: np.ndarray
    axis: np.ndarray
    half_angle: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        apex = np.asarray(self.apex, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > UNIT_TOL:
            raise ValueError("cone axis must be a unit vector")
        if not (0.0 < self.half_angle <= math.pi / 2 + 1e-15):
            raise ValueError(f"half_angle must lie in (0, pi/2], got {self.half_angle!r}")
        if apex.shape != axis.shape:
            raise DimensionError("cone apex and axis dimensions differ")
        axis.setflags(write=False)
        apex.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "half_angle", float(self.half_angle))


def cone_contains(cone: Cone, x) -> np.ndarray | bool:
    """Membership test; accepts a single point or an ``(N, dim)`` array."""
    x = np.asarray(x, dtype=float)
    d = x - cone.apex
    r = np.linalg.norm(d, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_angle = (d @ cone.axis) / r
    inside = (r > 0) & (cos_angle >= math.cos(cone.half_angle) - 1e-15)
    return bool(inside) if inside.ndim == 0 else inside


def cone_distance(cone: Cone, x) -> np.ndarray:
    """Euclidean distance from points to the closed 2D sector ``cone``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != 2:
        raise DimensionError("cone_distance is implemented for planar cones only")
    d = x - cone.apex
    r = np.linalg.norm(d, axis=1)
    cos_angle = np.divide(d @ cone.axis, r, out=np.ones_like(r), where=r > 0)
    phi = np.arccos(np.clip(cos_angle, -1.0, 1.0))
    excess = phi - cone.half_angle
    return np.where(excess <= 0, 0.0, np.where(excess < math.pi / 2, r * np.sin(np.clip(excess, 0, None)), r))


class ConvexBody:
    """Bounded convex body ``{x : A x >= c}``.

    Parameters
    ----------
    normals : (m, dim) array of unit inward normals.
    offsets : (m,) array.
    symmetric : claim that ``-body == body``; verified on construction.
    shape : optional analytic description, e.g. ``{"kind": "disk", "radius": 1.0}``.
    """

    def __init__(self, normals, offsets, symmetric: bool = False, shape: dict | None = None):
        A = np.array(normals, dtype=float)
        c = np.array(offsets, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != c.shape[0]:
            raise DimensionError("normals must be (m, dim) and offsets (m,)")
        if A.shape[1] not in (1, 2, 3):
            raise DimensionError(f"unsupported dimension {A.shape[1]}")
        norms = np.linalg.norm(A, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValueError("all halfspace normals must be unit vectors")
        self.A = A
        self.c = c
        self.dim = A.shape[1]
        self.symmetric = bool(symmetric)
        self.shape = dict(shape) if shape else {"kind": "polytope"}
        self.A.setflags(write=False)
        self.c.setflags(write=False)

        self._center, self._inradius = self._chebyshev_center()
        if self._inradius <= 1e-12:
            raise DegenerateInputError("convex body has empty interior")
        self.vertices = self._compute_vertices()
        self.bbox = np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])
        if self.symmetric:
            self._check_symmetry()

    # -- construction -------------------------------------------------

    @classmethod
    def from_halfspaces(cls, halfspaces, symmetric=False, shape=None):
        normals = np.array([h.normal for h in halfspaces])
        offsets = np.array([h.offset for h in halfspaces])
        return cls(normals, offsets, symmetric=symmetric, shape=shape)

    @classmethod
    def box(cls, lo, hi, symmetric=None):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(hi <= lo):
            raise DegenerateInputError("box needs hi > lo on every axis")
        dim = lo.size
        eye = np.eye(dim)
        normals = np.concatenate([eye, -eye])
        offsets = np.concatenate([lo, -hi])
        if symmetric is None:
            symmetric = bool(np.allclose(lo, -hi, atol=SYMMETRY_TOL))
        return cls(normals, offsets, symmetric=symmetric,
                   shape={"kind": "box", "lo": lo.tolist(), "hi": hi.tolist()})

    @classmethod
    def square(cls, half_width=1.0, center=(0.0, 0.0)):
        center = np.asarray(center, dtype=float)
        return cls.box(center - half_width, center + half_width)

    @classmethod
    def regular_polygon(cls, m: int, radius=1.0, center=(0.0, 0.0), rotation=0.0, shape=None):
        """Regular ``m``-gon with inradius ``radius`` (its facets are tangent to the circle)."""
        if m < 3:
            raise DegenerateInputError("a polygon needs at least 3 facets")
        center = np.asarray(center, dtype=float)
        theta = rotation + 2 * np.pi * np.arange(m) / m
        outward = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        normals = -outward
        offsets = -(radius + outward @ center)
        symmetric = (m % 2 == 0) and np.allclose(center, 0.0)
        shape = shape or {"kind": "regular_polygon", "m": m, "radius": float(radius),
                          "center": center.tolist(), "rotation": float(rotation)}
        return cls(normals, offsets, symmetric=symmetric, shape=shape)

    @classmethod
    def disk(cls, radius=1.0, m: int = DEFAULT_FACETS, center=(0.0, 0.0)):
        """Polygonal disk whose vertices lie on the circle of the given radius."""
        inradius = radius * math.cos(math.pi / m)
        shape = {"kind": "disk", "radius": float(radius), "center": list(map(float, center)), "m": m}
        return cls.regular_polygon(m, inradius, center=center, rotation=math.pi / m, shape=shape)

    @classmethod
    def ellipse(cls, a: float, b: float, m: int = DEFAULT_FACETS, rotation: float = 0.0):
        """Centered ellipse with semi-axes ``a`` (along ``rotation``) and ``b``.

        Facets are tangent lines at ``m`` equally spaced parameter values.
        """
        t = 2 * np.pi * (np.arange(m) + 0.5) / m
        cr, sr = math.cos(rotation), math.sin(rotation)
        rot = np.array([[cr, -sr], [sr, cr]])
        grad = np.stack([np.cos(t) / a, np.sin(t) / b], axis=1)
        pts = np.stack([a * np.cos(t), b * np.sin(t)], axis=1)
        outward = grad / np.linalg.norm(grad, axis=1, keepdims=True)
        outward = outward @ rot.T
        pts = pts @ rot.T
        normals = -outward
        offsets = -np.einsum("ij,ij->i", outward, pts)
        shape = {"kind": "ellipse", "a": float(a), "b": float(b), "rotation": float(rotation), "m": m}
        return cls(normals, offsets, symmetric=(m % 2 == 0), shape=shape)

    # -- geometry -----------------------------------------------------

    def _chebyshev_center(self):
        m, dim = self.A.shape
        # maximize r subject to A x - r >= c  (rows are unit)
        cost = np.zeros(dim + 1)
        cost[-1] = -1.0
        A_ub = np.hstack([-self.A, np.ones((m, 1))])
        res = linprog(cost, A_ub=A_ub, b_ub=-self.c,
                      bounds=[(None, None)] * dim + [(0, None)], method="highs")
        if res.status == 3:
            raise DegenerateInputError("halfspace intersection is unbounded")
        if res.status != 0:
            raise DegenerateInputError(f"could not find an interior point: {res.message}")
        return res.x[:dim], float(res.x[-1])

    def _compute_vertices(self):
        if self.dim == 1:
            lo = max((c / a[0] for a, c in zip(self.A, self.c) if a[0] > 0), default=-np.inf)
            hi = min((c / a[0] for a, c in zip(self.A, self.c) if a[0] < 0), default=np.inf)
            if not np.isfinite(lo) or not np.isfinite(hi):
                raise DegenerateInputError("interval is unbounded")
            return np.array([[lo], [hi]])
        # scipy convention: stacked [A; b] with A x + b <= 0
        halfspaces = np.hstack([-self.A, self.c[:, None]])
        try:
            hs = HalfspaceIntersection(halfspaces, self._center)
        except QhullError as exc:
            raise DegenerateInputError(f"halfspace intersection failed: {exc}") from exc
        pts = hs.intersections
        if not np.all(np.isfinite(pts)):
            raise DegenerateInputError("halfspace intersection is unbounded")
        hull = ConvexHull(pts)
        pts = pts[hull.vertices]
        if self.dim == 2:
            ang = np.arctan2(pts[:, 1] - self._center[1], pts[:, 0] - self._center[0])
            pts = pts[np.argsort(ang)]
        return pts

    def _check_symmetry(self):
        for a, c in zip(self.A, self.c):
            match = np.all(np.abs(self.A + a) <= SYMMETRY_TOL, axis=1) & (np.abs(self.c - c) <= SYMMETRY_TOL)
            if not match.any():
                raise DegenerateInputError("body flagged symmetric but halfspace (-a, c) is missing")

    @property
    def interior_point(self) -> np.ndarray:
        return self._center.copy()

    @property
    def inradius(self) -> float:
        return self._inradius

    @property
    def halfspaces(self) -> list[Halfspace]:
        return [Halfspace(a, c) for a, c in zip(self.A, self.c)]

    @property
    def volume(self) -> float:
        if self.dim == 1:
            return float(self.vertices[1, 0] - self.vertices[0, 0])
        return float(ConvexHull(self.vertices).volume)

    def contains(self, x, strict: bool = False):
        """Membership for one point or an ``(N, dim)`` array of points."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"point dimension {x.shape[-1]} != body dimension {self.dim}")
        slack = x @ self.A.T - self.c
        inside = np.all(slack > CONTAINS_MARGIN, axis=-1) if strict else np.all(slack >= -CONTAINS_MARGIN, axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def support(self, direction) -> float:
        """``max_{x in body} direction . x`` by linear programming."""
        a = np.asarray(direction, dtype=float)
        if a.shape != (self.dim,):
            raise DimensionError("direction has wrong dimension")
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ValueError("support direction must be a unit vector")
        res = linprog(-a, A_ub=-self.A, b_ub=-self.c, bounds=[(None, None)] * self.dim, method="highs")
        if res.status == 3:
            raise DegenerateInputError("support is unbounded in this direction")
        if res.status != 0:
            raise IsolabError(f"support LP failed: {res.message}")
        return float(-res.fun)

    def support_many(self, directions) -> np.ndarray:
        """Support values for many directions at once (vertex enumeration)."""
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        return (directions @ self.vertices.T).max(axis=1)

    def facet_slack(self, x) -> np.ndarray:
        """``A x - c`` per facet; the minimum is the distance to the boundary for interior points."""
        return np.asarray(x, dtype=float) @ self.A.T - self.c

    def boundary_distance(self, x) -> np.ndarray:
        """Signed distance to the boundary: positive inside, negative outside (facet-plane distance)."""
        return self.facet_slack(x).min(axis=-1)

    def ray_exit(self, p, d) -> float:
        """Distance along unit direction ``d`` from interior point ``p`` to the boundary."""
        p = np.asarray(p, dtype=float)
        d = np.asarray(d, dtype=float)
        rate = self.A @ d
        slack = self.A @ p - self.c
        leaving = rate < -1e-15
        if not leaving.any():
            raise DegenerateInputError("ray does not leave the body")
        return float(np.min(slack[leaving] / -rate[leaving]))

    def boundary_normal(self, x) -> np.ndarray:
        """Outward unit normal of the boundary nearest to ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        kind = self.shape.get("kind")
        if kind == "disk":
            d = x - np.asarray(self.shape["center"])
            return d / np.linalg.norm(d, axis=1, keepdims=True)
        if kind == "ellipse":
            rot = self.shape["rotation"]
            cr, sr = math.cos(rot), math.sin(rot)
            R = np.array([[cr, -sr], [sr, cr]])
            local = x @ R
            g = np.stack([local[:, 0] / self.shape["a"] ** 2, local[:, 1] / self.shape["b"] ** 2], axis=1) @ R.T
            return g / np.linalg.norm(g, axis=1, keepdims=True)
        idx = np.argmin(self.facet_slack(x), axis=1)
        return -self.A[idx]

    def boundary_curvature(self, x) -> np.ndarray:
        """Curvature of the boundary near ``x``: analytic for smooth shapes, zero on facets."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        kind = self.shape.get("kind")
        if kind == "disk":
            return np.full(len(x), 1.0 / self.shape["radius"])
        if kind == "ellipse":
            a, b, rot = self.shape["a"], self.shape["b"], self.shape["rotation"]
            cr, sr = math.cos(rot), math.sin(rot)
            local = x @ np.array([[cr, -sr], [sr, cr]])
            t = np.arctan2(local[:, 1] / b, local[:, 0] / a)
            return a * b / (a ** 2 * np.sin(t) ** 2 + b ** 2 * np.cos(t) ** 2) ** 1.5
        return np.zeros(len(x))

    def outline(self) -> np.ndarray:
        """Closed boundary polygon (2D only) for plotting."""
        if self.dim != 2:
            raise DimensionError("outline is only defined in 2D")
        return np.vstack([self.vertices, self.vertices[:1]])

    def to_dict(self) -> dict:
        return {"shape": self.shape, "symmetric": self.symmetric, "dim": self.dim,
                "facets": int(len(self.c)), "bbox": self.bbox.tolist()}

    def __repr__(self):
        return f"ConvexBody(dim={self.dim}, facets={len(self.c)}, shape={self.shape.get('kind')!r})"


def convex_hull(points, symmetric: bool = False) -> ConvexBody:
    """Minimal polytope containing ``points``.

    Raises :class:`DegenerateInputError` when the points are affinely dependent.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise DimensionError("points must be an (N, dim) array")
    n, dim = pts.shape
    if n < dim + 1 or np.linalg.matrix_rank(pts[1:] - pts[0], tol=1e-12 * max(1.0, np.abs(pts).max())) < dim:
        raise DegenerateInputError("convex hull input is affinely dependent")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateInputError(f"degenerate hull input: {exc}") from exc
    eq = hull.equations  # outward normal n, offset b: n.x + b <= 0
    normals = -eq[:, :dim]
    offsets = eq[:, dim]
    norms = np.linalg.norm(normals, axis=1)
    normals /= norms[:, None]
    offsets /= norms
    # merge coplanar facets produced by triangulation
    key = np.round(np.hstack([normals, offsets[:, None]]), 10)
    _, keep = np.unique(key, axis=0, return_index=True)
    keep.sort()
    return ConvexBody(normals[keep], offsets[keep], symmetric=symmetric, shape={"kind": "hull"})


def body_from_spec(spec: dict) -> ConvexBody:
    """Build a body from an experiment-config table.

    ``kind`` is one of square, box, disk, ellipse, polygon, hull-of-points.
    """
    spec = dict(spec)
    kind = spec.pop("kind")
    symmetric = spec.pop("symmetric", None)
    if kind == "square":
        body = ConvexBody.square(spec.get("half_width", 1.0), spec.get("center", (0.0, 0.0)))
    elif kind == "box":
        body = ConvexBody.box(spec["lo"], spec["hi"])
    elif kind == "disk":
        body = ConvexBody.disk(spec.get("radius", 1.0), spec.get("m", DEFAULT_FACETS), spec.get("center", (0.0, 0.0)))
    elif kind == "ellipse":
        body = ConvexBody.ellipse(spec["a"], spec["b"], spec.get("m", DEFAULT_FACETS), spec.get("rotation", 0.0))
    elif kind == "regular_polygon":
        body = ConvexBody.regular_polygon(spec["m"], spec.get("radius", 1.0), rotation=spec.get("rotation", 0.0))
    elif kind in ("polygon", "hull-of-points"):
        body = convex_hull(spec["points"], symmetric=bool(symmetric))
    else:
        raise ValueError(f"unknown body kind {kind!r}")
    if symmetric is not None and bool(symmetric) != body.symmetric:
        # re-validate the user's claim
        body = ConvexBody(body.A, body.c, symmetric=bool(symmetric), shape=body.shape)
    return body
