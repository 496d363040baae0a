"""Log-concave densities, weighted grid quadrature, marginals and the 1D tail bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special
from scipy.interpolate import RegularGridInterpolator

from .convex import ConvexBody
from .errors import DimensionError, PreconditionError, QuadratureError
from .grid import Grid, ScalarField, _subcell_offsets

DEFAULT_TRUNCATION = 1e-10
MASS_TOL = 1e-6
PREDICATE_SUBSAMPLES = 16


def _sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


@dataclass(frozen=True)
class Factor1D:
    """One-dimensional log-concave factor of a product density."""

    kind: str  # gaussian | laplace | uniform
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "laplace", "uniform"):
            raise ValueError(f"unknown 1D factor {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("factor scale must be positive")

    @property
    def Z(self) -> float:
        if self.kind == "gaussian":
            return math.sqrt(2 * math.pi) * self.scale
        if self.kind == "laplace":
            return 2.0 / self.scale  # w = (m/2) e^{-m|s|}, scale = m
        return 2.0 * self.scale

    def V(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "gaussian":
            return s ** 2 / (2 * self.scale ** 2)
        if self.kind == "laplace":
            return self.scale * np.abs(s)
        return np.where(np.abs(s) <= self.scale, 0.0, np.inf)

    def dV(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "gaussian":
            return s / self.scale ** 2
        if self.kind == "laplace":
            return self.scale * np.sign(s)
        return np.zeros_like(s)

    def d2V(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "gaussian":
            return np.full_like(s, 1 / self.scale ** 2)
        return np.zeros_like(s)

    def radius(self, tail: float) -> float:
        """Symmetric truncation radius leaving total mass ``tail`` outside."""
        if self.kind == "gaussian":
            return float(self.scale * math.sqrt(2) * special.erfcinv(tail))
        if self.kind == "laplace":
            return float(-math.log(tail) / self.scale)
        return float(self.scale)

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "gaussian":
            return special.ndtr(s / self.scale)
        if self.kind == "laplace":
            return np.where(s < 0, 0.5 * np.exp(self.scale * s), 1 - 0.5 * np.exp(-self.scale * s))
        return np.clip((s + self.scale) / (2 * self.scale), 0, 1)

    def breakpoints(self) -> list[float]:
        if self.kind == "laplace":
            return [0.0]
        if self.kind == "uniform":
            return [-self.scale, self.scale]
        return []


class Density:
    """Probability density ``w = exp(-V) / Z`` on R^dim.

    Use the constructors :meth:`uniform`, :meth:`gaussian`, :meth:`power_exp`,
    :meth:`product` and :meth:`custom`.  ``support`` is the convex body on which
    grids are built: the body itself for uniform densities, otherwise the ball
    (or box) that carries all but ``truncation_mass`` of the probability.
    """

    def __init__(self, kind: str, dim: int, params: dict, Z: float, support: ConvexBody | None,
                 symmetric: bool, truncation_mass: float, radius: float | None):
        self.kind = kind
        self.dim = dim
        self.params = params
        self.Z = float(Z)
        self.support = support
        self.symmetric = symmetric
        self.truncation_mass = truncation_mass
        self.radius = radius
        self._factors: tuple[Factor1D, ...] = ()
        self._custom = None

    # -- constructors -------------------------------------------------

    @classmethod
    def uniform(cls, body: ConvexBody) -> "Density":
        return cls("uniform", body.dim, {"body": body.to_dict()}, body.volume, body,
                   symmetric=body.symmetric, truncation_mass=0.0, radius=None)

    @classmethod
    def gaussian(cls, sigma: float = 1.0, dim: int = 2, truncation_mass: float = DEFAULT_TRUNCATION,
                 facets: int = 256) -> "Density":
        Z = (2 * math.pi * sigma ** 2) ** (dim / 2)
        # |X|^2 / (2 sigma^2) ~ Gamma(dim/2)
        R = sigma * math.sqrt(2 * special.gammainccinv(dim / 2, truncation_mass))
        d = cls("gaussian", dim, {"sigma": sigma}, Z, _ball_support(R, dim, facets),
                symmetric=True, truncation_mass=truncation_mass, radius=R)
        return d

    @classmethod
    def power_exp(cls, beta: float, scale: float = 1.0, dim: int = 2,
                  truncation_mass: float = DEFAULT_TRUNCATION, facets: int = 256) -> "Density":
        if beta <= 1:
            raise ValueError("power_exp requires beta > 1")
        Z = scale ** dim * _sphere_area(dim) * math.gamma(dim / beta) / beta
        # (|X|/scale)^beta ~ Gamma(dim/beta)
        R = scale * special.gammainccinv(dim / beta, truncation_mass) ** (1 / beta)
        return cls("power_exp", dim, {"beta": beta, "scale": scale}, Z, _ball_support(R, dim, facets),
                   symmetric=True, truncation_mass=truncation_mass, radius=R)

    @classmethod
    def product(cls, factors, truncation_mass: float = DEFAULT_TRUNCATION) -> "Density":
        factors = tuple(f if isinstance(f, Factor1D) else Factor1D(*f) for f in factors)
        dim = len(factors)
        Z = math.prod(f.Z for f in factors)
        radii = np.array([f.radius(truncation_mass / dim) for f in factors])
        support = ConvexBody.box(-radii, radii)
        d = cls("product_1d", dim, {"factors": [(f.kind, f.scale) for f in factors]}, Z, support,
                symmetric=True, truncation_mass=truncation_mass, radius=float(radii.max()))
        d._factors = factors
        return d

    @classmethod
    def custom(cls, grid: Grid, V_values: np.ndarray, symmetric: bool = False) -> "Density":
        """Density from potential values sampled at the cell centers of ``grid``."""
        V_values = np.asarray(V_values, dtype=float)
        if V_values.shape != grid.shape:
            raise DimensionError("potential samples must match the grid shape")
        w = np.exp(-V_values) * grid.mask
        Z = float(np.sum(w) * grid.cell_volume)
        if grid.body is not None:
            support = grid.body
        else:
            lo = grid.origin
            support = ConvexBody.box(lo, lo + np.array(grid.shape) * grid.h)
        d = cls("custom", grid.dim, {"grid": grid.header()}, Z, support, symmetric=symmetric,
                truncation_mass=0.0, radius=None)
        axes = grid.axes()
        grads = np.gradient(V_values, grid.h) if grid.dim > 1 else [np.gradient(V_values, grid.h)]
        hess = [[np.gradient(g, grid.h)[j] if grid.dim > 1 else np.gradient(g, grid.h) for j in range(grid.dim)]
                for g in grads]
        interp = lambda vals: RegularGridInterpolator(axes, vals, bounds_error=False, fill_value=None)  # noqa: E731
        d._custom = {
            "V": interp(V_values),
            "grad": [interp(g) for g in grads],
            "hess": [[interp(hij) for hij in row] for row in hess],
        }
        return d

    # -- potential ----------------------------------------------------

    def _pts(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"point dimension {x.shape[-1]} != density dimension {self.dim}")
        return x

    def V(self, x) -> np.ndarray:
        x = self._pts(x)
        if self.kind == "uniform":
            inside = self.support.contains(x.reshape(-1, self.dim)).reshape(x.shape[:-1])
            return np.where(inside, 0.0, np.inf)
        if self.kind == "gaussian":
            return np.sum(x ** 2, axis=-1) / (2 * self.params["sigma"] ** 2)
        if self.kind == "power_exp":
            r = np.linalg.norm(x, axis=-1)
            return (r / self.params["scale"]) ** self.params["beta"]
        if self.kind == "product_1d":
            return sum(f.V(x[..., i]) for i, f in enumerate(self._factors))
        return self._custom["V"](x.reshape(-1, self.dim)).reshape(x.shape[:-1])

    def grad_V(self, x) -> np.ndarray:
        x = self._pts(x)
        if self.kind == "uniform":
            return np.zeros_like(x)
        if self.kind == "gaussian":
            return x / self.params["sigma"] ** 2
        if self.kind == "power_exp":
            beta, s = self.params["beta"], self.params["scale"]
            r = np.linalg.norm(x, axis=-1, keepdims=True)
            with np.errstate(divide="ignore", invalid="ignore"):
                g = beta / s ** beta * np.where(r > 0, r ** (beta - 2), 0.0) * x
            return g
        if self.kind == "product_1d":
            return np.stack([f.dV(x[..., i]) for i, f in enumerate(self._factors)], axis=-1)
        flat = x.reshape(-1, self.dim)
        return np.stack([g(flat) for g in self._custom["grad"]], axis=-1).reshape(x.shape)

    def hess_V(self, x) -> np.ndarray:
        """Hessian of V, shape ``x.shape + (dim,)``."""
        x = self._pts(x)
        eye = np.eye(self.dim)
        if self.kind == "uniform":
            return np.zeros(x.shape + (self.dim,))
        if self.kind == "gaussian":
            return np.broadcast_to(eye / self.params["sigma"] ** 2, x.shape + (self.dim,)).copy()
        if self.kind == "power_exp":
            beta, s = self.params["beta"], self.params["scale"]
            r = np.linalg.norm(x, axis=-1)[..., None, None]
            safe = np.where(r > 0, r, 1.0)
            xhat = x[..., :, None] * x[..., None, :] / safe ** 2
            return beta / s ** beta * safe ** (beta - 2) * (eye + (beta - 2) * xhat)
        if self.kind == "product_1d":
            H = np.zeros(x.shape + (self.dim,))
            for i, f in enumerate(self._factors):
                H[..., i, i] = f.d2V(x[..., i])
            return H
        flat = x.reshape(-1, self.dim)
        H = np.stack([np.stack([hij(flat) for hij in row], axis=-1) for row in self._custom["hess"]], axis=-2)
        return H.reshape(x.shape + (self.dim,))

    def pdf(self, x) -> np.ndarray:
        return np.exp(-self.V(x)) / self.Z

    def cell_weights(self, grid: Grid) -> np.ndarray:
        """Quadrature weight ``w(center) * mask * h^dim`` for every cell.

        Uniform densities take ``1/Z`` on every (partially) covered cell so that
        boundary cells keep their partial volume even when the center is outside.
        """
        if self.kind == "uniform":
            w = np.full(grid.shape, 1.0 / self.Z)
        else:
            w = self.pdf(grid.centers())
        return w * grid.mask * grid.cell_volume

    def grid(self, n: int, subsamples: int = 4) -> Grid:
        """Grid with ``n`` cells across the effective support."""
        return Grid.covering(self.support, n, subsamples=subsamples)

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "params": self.params, "Z": self.Z,
                "symmetric": self.symmetric, "truncation_mass": self.truncation_mass,
                "truncation_radius": self.radius}

    def __repr__(self):
        return f"Density({self.kind!r}, dim={self.dim}, params={self.params})"


def _ball_support(R: float, dim: int, facets: int) -> ConvexBody:
    if dim == 2:
        return ConvexBody.disk(R, m=facets)
    return ConvexBody.box(-R * np.ones(dim), R * np.ones(dim))


def density_from_spec(spec: dict, body: ConvexBody | None = None) -> Density:
    """Build a density from ``{kind, params, truncation_mass}`` config tables."""
    kind = spec.get("kind", "uniform")
    params = dict(spec.get("params", {}))
    tail = spec.get("truncation_mass", DEFAULT_TRUNCATION)
    if kind == "uniform":
        if body is None:
            raise ValueError("uniform density needs a body")
        return Density.uniform(body)
    if kind == "gaussian":
        return Density.gaussian(params.get("sigma", 1.0), params.get("dim", 2), truncation_mass=tail)
    if kind == "power_exp":
        return Density.power_exp(params["beta"], params.get("scale", 1.0), params.get("dim", 2), truncation_mass=tail)
    if kind == "product_1d":
        return Density.product([tuple(f) for f in params["factors"]], truncation_mass=tail)
    raise ValueError(f"unsupported density kind {kind!r} in configs")


def check_log_concave(d: Density, rng: np.random.Generator, samples: int = 200, tol: float = 1e-9) -> bool:
    """Midpoint convexity of V on random pairs inside the support."""
    lo, hi = d.support.bbox
    x = rng.uniform(lo, hi, size=(samples, d.dim))
    y = rng.uniform(lo, hi, size=(samples, d.dim))
    keep = d.support.contains(x) & d.support.contains(y)
    x, y = x[keep], y[keep]
    mid = d.V(0.5 * (x + y))
    return bool(np.all(mid <= 0.5 * (d.V(x) + d.V(y)) + tol))


def total_mass(d: Density, grid: Grid) -> float:
    return float(np.sum(d.cell_weights(grid)))


def measure(d: Density, indicator=None, grid: Grid | None = None, subsamples: int | None = None) -> float:
    """Weighted midpoint-rule mass of a set on ``grid``.

    ``indicator`` may be None (whole support), a :class:`ScalarField` of values
    in [0, 1] (or booleans), an array of the grid shape, or a predicate taking an
    ``(..., dim)`` array of points.  Predicates are averaged over
    ``subsamples**dim`` points on cells the set boundary crosses (default 16).
    """
    if grid is None:
        raise ValueError("measure needs a grid")
    grid.check_resolution()
    weights = d.cell_weights(grid)
    if indicator is None:
        ind = 1.0
    elif isinstance(indicator, ScalarField):
        ind = indicator.values
    elif callable(indicator):
        k = PREDICATE_SUBSAMPLES if subsamples is None else subsamples
        ind = _predicate_fraction(indicator, grid, k)
    else:
        ind = np.asarray(indicator, dtype=float)
    return float(np.sum(np.ascontiguousarray(weights * ind)))


def _predicate_fraction(pred, grid: Grid, k: int) -> np.ndarray:
    """Cell fractions of a predicate: centers, refined with ``k**dim`` samples on mixed cells.

    A cell counts as mixed when the predicate at any of its corners disagrees
    with its center.
    """
    centers = grid.centers()
    frac = np.asarray(pred(centers), dtype=float)
    if k <= 1:
        return frac
    corner_axes = [grid.origin[i] + np.arange(s + 1) * grid.h for i, s in enumerate(grid.shape)]
    corners = np.asarray(pred(np.stack(np.meshgrid(*corner_axes, indexing="ij"), axis=-1)), dtype=bool)
    mixed = np.zeros(grid.shape, dtype=bool)
    inside = frac > 0.5
    for shift in np.ndindex(*([2] * grid.dim)):
        sl = tuple(slice(o, o + s) for o, s in zip(shift, grid.shape))
        mixed |= corners[sl] != inside
    if mixed.any():
        offs = _subcell_offsets(grid.dim, k) * grid.h
        pts = centers[mixed][:, None, :] + offs[None, :, :]
        frac[mixed] = np.asarray(pred(pts), dtype=float).mean(axis=1)
    return frac


# -- marginals ----------------------------------------------------------


def _complement_basis(a: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the hyperplane orthogonal to unit ``a`` (rows)."""
    n = a.size
    q, _ = np.linalg.qr(np.column_stack([a, np.eye(n)]))
    basis = q[:, 1:n].T
    return basis


def _interval(A: np.ndarray, rhs: np.ndarray):
    """Solve ``A s >= rhs`` for scalar s; returns (lo, hi) or None if empty."""
    lo, hi = -np.inf, np.inf
    for coef, r in zip(A, rhs):
        if coef > 1e-15:
            lo = max(lo, r / coef)
        elif coef < -1e-15:
            hi = min(hi, r / coef)
        elif r > 1e-15:
            return None
    if hi <= lo:
        return None
    return lo, hi


class _SliceIntegrator:
    """Computes ``w_a(t)`` by quadrature over the slice ``{a.x = t}`` of the support."""

    def __init__(self, d: Density, a: np.ndarray, epsabs=1e-13, epsrel=1e-10):
        self.d = d
        self.a = a
        self.B = _complement_basis(a) if d.dim > 1 else np.zeros((0, 1))
        self.epsabs = epsabs
        self.epsrel = epsrel
        body = d.support
        self.t_range = (-float(body.support_many(-a)[0]), float(body.support_many(a)[0]))

    def t_kinks(self) -> list[float]:
        """Offsets t where ``w_a`` may fail to be smooth: projections of support
        vertices and of crossings of the factor breakpoints."""
        # truncated smooth densities carry no mass at their polygonal support edge
        hard_edge = self.d.kind in ("uniform", "product_1d")
        pts = list(self.d.support.vertices @ self.a) if self.d.dim == 2 and hard_edge else []
        if self.d.kind == "product_1d" and self.d.dim == 2:
            b0, b1 = (f.breakpoints() for f in self.d._factors)
            pts += [self.a[0] * x + self.a[1] * y for x in b0 for y in b1]
        return sorted(set(float(p) for p in pts))

    def _kinks(self, t, b, offset):
        pts = []
        if self.d.kind == "product_1d":
            for i, f in enumerate(self.d._factors):
                for k in f.breakpoints():
                    if abs(b[i]) > 1e-14:
                        pts.append((k - offset[i]) / b[i])
        return pts

    def _line_integral(self, p0, b, lo, hi):
        if self.d.kind == "uniform":
            return (hi - lo) / self.d.Z, 0.0
        fn = lambda s: float(self.d.pdf(p0 + s * b))  # noqa: E731
        pts = [p for p in self._kinks(None, b, p0) if lo < p < hi]
        val, err = integrate.quad(fn, lo, hi, points=pts or None, epsabs=self.epsabs, epsrel=self.epsrel, limit=200)
        return val, err

    def __call__(self, t: float) -> float:
        d, a = self.d, self.a
        if d.dim == 1:
            return float(d.pdf(np.array([t * a[0]])))
        body = d.support
        p0 = t * a
        if d.dim == 2:
            b = self.B[0]
            iv = _interval(body.A @ b, body.c - body.A @ p0)
            if iv is None:
                return 0.0
            val, err = self._line_integral(p0, b, *iv)
            if err > max(self.epsabs * 100, 1e-8 * abs(val)):
                raise QuadratureError("slice quadrature did not converge", t=t, value=val, error=err)
            return float(val)
        if d.dim == 3:
            b1, b2 = self.B
            # outer variable s2 ranges over the projection of the slice polygon
            ivals = _slice_polygon_range(body, p0, b1, b2)
            if ivals is None:
                return 0.0

            def inner(s2):
                q = p0 + s2 * b2
                iv = _interval(body.A @ b1, body.c - body.A @ q)
                if iv is None:
                    return 0.0
                return self._line_integral(q, b1, *iv)[0]

            val, err = integrate.quad(inner, *ivals, epsabs=self.epsabs, epsrel=1e-8, limit=100)
            if err > max(1e-9, 1e-7 * abs(val)):
                raise QuadratureError("slice quadrature did not converge", t=t, value=val, error=err)
            return float(val)
        raise DimensionError("marginals are implemented for dim <= 3")


def _slice_polygon_range(body: ConvexBody, p0, b1, b2):
    from scipy.optimize import linprog

    A2 = np.column_stack([body.A @ b1, body.A @ b2])
    rhs = body.c - body.A @ p0
    out = []
    for sign in (1.0, -1.0):
        res = linprog([0.0, sign], A_ub=-A2, b_ub=-rhs, bounds=[(None, None)] * 2, method="highs")
        if res.status != 0:
            return None
        out.append(sign * res.fun)
    lo, hi = out[0], out[1]
    return (lo, hi) if hi > lo else None


@dataclass
class Marginal:
    """Sampled marginal ``w_a(t) = mu_{n-1}({a.x = t})``."""

    direction: np.ndarray
    t: np.ndarray
    values: np.ndarray
    fn: Callable[[float], float] | None = None
    t_range: tuple = (-np.inf, np.inf)
    symmetric_density: bool = False
    kinks: tuple = ()

    def at(self, t: float) -> float:
        if self.fn is not None:
            return float(self.fn(t))
        return float(np.interp(t, self.t, self.values, left=0.0, right=0.0))

    @property
    def at_zero(self) -> float:
        return self.at(0.0)

    def asymmetry(self) -> float:
        """Largest ``|w(t) - w(-t)|`` over the sample points, relative to ``max w``."""
        scale = max(float(np.max(self.values)), 1e-300)
        mirrored = np.array([self.at(-s) for s in self.t])
        return float(np.max(np.abs(mirrored - self.values)) / scale)

    def is_log_concave(self, tol: float = 1e-9) -> bool:
        """Discrete midpoint test on consecutive positive samples of a uniform t grid."""
        v = self.values
        pos = v > 1e-300
        lv = np.log(np.where(pos, v, 1.0))
        ok = pos[:-2] & pos[1:-1] & pos[2:]
        mid = lv[1:-1] - 0.5 * (lv[:-2] + lv[2:])
        return bool(np.all(mid[ok] >= -tol))

    def tail(self, t: float) -> float:
        """``int_t^inf w_a(s) ds``."""
        lo, hi = self.t_range
        if self.fn is None:
            sel = self.t >= t
            ts = np.concatenate([[t], self.t[sel]])
            vs = np.concatenate([[self.at(t)], self.values[sel]])
            return float(np.trapz(vs, ts))
        if t >= hi:
            return 0.0
        start = max(t, lo)
        pts = [p for p in {0.0, *self.kinks} if start < p < hi]
        val, _ = integrate.quad(self.fn, start, hi, points=pts or None, epsabs=1e-14, epsrel=1e-12,
                                limit=max(200, 2 * len(pts) + 50))
        return float(val)

    def total_mass(self) -> float:
        if self.fn is None:
            return float(np.trapz(self.values, self.t))
        return self.tail(self.t_range[0])

    def quantile_offset(self, mass: float) -> float:
        """Offset ``c`` with ``int_c^inf w_a = mass``."""
        from scipy.optimize import brentq

        lo, hi = self.t_range
        lo = max(lo, -1e6)
        return float(brentq(lambda c: self.tail(c) - mass, lo, hi, xtol=1e-13))


def marginal(d: Density, a, t_grid) -> Marginal:
    """Marginal of ``d`` along unit direction ``a`` sampled on ``t_grid``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != d.dim:
        raise DimensionError("direction dimension mismatch")
    if abs(np.linalg.norm(a) - 1.0) > 1e-9:
        raise ValueError("marginal direction must be a unit vector")
    integ = _SliceIntegrator(d, a)
    t_grid = np.asarray(t_grid, dtype=float)
    values = np.array([integ(t) for t in t_grid])
    return Marginal(a, t_grid, values, fn=integ, t_range=integ.t_range, symmetric_density=d.symmetric,
                    kinks=tuple(integ.t_kinks()))


def tail_bound_check(m: Marginal, t: float, sym_tol: float = 1e-6) -> dict:
    """One-dimensional tail inequality ``int_t^inf w <= exp(-2 w(0) t) / 2``.

    Requires a symmetric marginal; raises :class:`PreconditionError` otherwise.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    asym = m.asymmetry()
    if asym > sym_tol:
        raise PreconditionError(f"marginal is not symmetric (relative asymmetry {asym:.3g})")
    lhs = m.tail(t)
    rhs = 0.5 * math.exp(-2.0 * m.at_zero * t)
    return {"lhs": lhs, "rhs": rhs, "satisfied": bool(lhs <= rhs + 1e-8), "log_concave": m.is_log_concave()}
