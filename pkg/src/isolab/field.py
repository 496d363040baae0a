"""Constrained phase-field minimization on masked grids.

The energy is the balanced Modica-Mortola functional

    E_eps(f) = int [eps |grad f|^2 + W(f) / eps] w dx,   W(u) = (1 - u^2)^2,

discretized with face differences (one term per pair of neighbouring active
cells) so that the discrete gradient is the exact derivative of the discrete
energy.  Minimizers approximate isoperimetric sets ``{f > 0}`` with weighted
mass ``alpha``; ``E_eps / C0`` approximates their weighted perimeter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import fft
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq

from .errors import InvariantViolation, ResolutionError, SolverError
from .grid import Grid, ScalarField, inside_fraction  # noqa: F401  (re-exported)
from .measure import Density, _predicate_fraction

C0 = 8.0 / 3.0  # 2 * int_{-1}^{1} sqrt(W)
CLIP = 1.5
WELL_CURVATURE = 8.0  # W''(+-1)
DRIFT_TOL = 1e-6


def W(u):
    return (1.0 - u * u) ** 2


def dW(u):
    return -4.0 * u * (1.0 - u * u)


class PhaseFieldProblem:
    """Density, grid, interface width ``eps`` and target weighted volume fraction ``alpha``.

    ``density=None`` means the unnormalized Lebesgue weight 1 on the grid's body.
    """

    def __init__(self, density: Density | None, grid: Grid, eps: float, alpha: float):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if eps < 2 * grid.h * (1 - 1e-12):
            raise ResolutionError(f"eps={eps:g} does not resolve the interface (need eps >= 2h = {2 * grid.h:g})")
        self.density = density
        self.grid = grid
        self.eps = float(eps)
        self.alpha = float(alpha)
        if density is None:
            w = np.ones(grid.shape)
        elif density.kind == "uniform":
            w = np.full(grid.shape, 1.0 / density.Z)
        else:
            w = density.pdf(grid.centers())
        m = grid.mask
        hn = grid.cell_volume
        self.w = w
        self.omega = w * m * hn
        self.active = m > 0
        self.faces = []
        for k in range(grid.dim):
            lo = [slice(None)] * grid.dim
            hi = [slice(None)] * grid.dim
            lo[k] = slice(None, -1)
            hi[k] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            self.faces.append((k, lo, hi, np.minimum(m[lo], m[hi]) * 0.5 * (w[lo] + w[hi]) * hn))
        self.total = float(self.omega.sum())
        self.target = (2 * self.alpha - 1) * self.total

    def with_eps(self, eps: float) -> "PhaseFieldProblem":
        return PhaseFieldProblem(self.density, self.grid, eps, self.alpha)

    def mass_defect(self, f: np.ndarray) -> float:
        """``int f w / int w - (2 alpha - 1)``."""
        return float(np.sum(self.omega * f) / self.total - (2 * self.alpha - 1))

    def project(self, f: np.ndarray) -> np.ndarray:
        """Clip to [-CLIP, CLIP] and add the constant restoring the mass constraint.

        When the shift pushes cells past the clip bounds, the constant solves
        ``sum omega clip(f + s) = target`` instead (monotone in s).
        """
        out = np.clip(f, -CLIP, CLIP)
        shift = (self.target - np.sum(self.omega * out)) / self.total
        trial = np.where(self.active, out + shift, out)
        if np.abs(trial[self.active]).max() <= CLIP:
            return trial
        g = lambda s: float(np.sum(self.omega * np.clip(out + s, -CLIP, CLIP)) - self.target)  # noqa: E731
        s = brentq(g, -2 * CLIP, 2 * CLIP, xtol=1e-15)
        return np.where(self.active, np.clip(out + s, -CLIP, CLIP), out)


def _values(f):
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)


def energy(f, p: PhaseFieldProblem) -> float:
    f = _values(f)
    h2 = p.grid.h ** 2
    total = 0.0
    for _, lo, hi, fw in p.faces:
        total += p.eps * np.sum(fw * (f[hi] - f[lo]) ** 2) / h2
    total += np.sum(p.omega * W(f)) / p.eps
    return float(total)


def energy_partials(f, p: PhaseFieldProblem) -> np.ndarray:
    """Euclidean partial derivatives dE/df_i."""
    f = _values(f)
    h2 = p.grid.h ** 2
    out = p.omega * dW(f) / p.eps
    for _, lo, hi, fw in p.faces:
        flux = 2 * p.eps * fw * (f[hi] - f[lo]) / h2
        out[lo] -= flux
        out[hi] += flux
    return out


def energy_gradient(f, p: PhaseFieldProblem) -> ScalarField:
    """Gradient in the ``L^2(w dx)`` inner product (zero on inactive cells)."""
    g = energy_partials(f, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(p.omega > 0, g / np.where(p.omega > 0, p.omega, 1.0), 0.0)
    return ScalarField(p.grid, g)


class _Preconditioner:
    """Approximate inverse Hessian ``D^{-1/2} (2 eps (-Lap) + W''/eps)^{-1} D^{-1/2}``.

    The constant-coefficient inverse is applied with cosine transforms on the
    bounding box (Neumann at the box walls); ``D`` is the per-cell weight.
    """

    def __init__(self, p: PhaseFieldProblem):
        g = p.grid
        lam = np.zeros(g.shape)
        for k, n in enumerate(g.shape):
            ev = (2 - 2 * np.cos(np.pi * np.arange(n) / n)) / g.h ** 2
            shape = [1] * g.dim
            shape[k] = n
            lam = lam + ev.reshape(shape)
        self.symbol = 1.0 / (2 * p.eps * lam + WELL_CURVATURE / p.eps)
        floor = 1e-10 * p.omega.max()
        self.scale = np.where(p.active, 1.0 / np.sqrt(np.maximum(p.omega, floor)), 0.0)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        x = fft.dctn(self.scale * r, type=2, norm="ortho")
        return self.scale * fft.idctn(self.symbol * x, type=2, norm="ortho")


@dataclass
class MinimizeConfig:
    tol: float = 1e-4  # on eps * |projected L2(w) gradient|
    max_iters: int = 4000
    eps_start: float | None = None
    eps_stages: int = 3
    armijo: float = 1e-4
    stall_window: int = 50
    stall_tol: float = 1e-5  # relative energy decrease over the window
    callback: Callable | None = None


@dataclass
class StageResult:
    eps: float
    energy: float
    iterations: int
    residual: float
    converged_by: str
    history: list = field(default_factory=list)


def _residual(gp: np.ndarray, p: PhaseFieldProblem) -> float:
    mask = p.omega > 0
    g = np.where(mask, gp / np.where(mask, p.omega, 1.0), 0.0)
    gbar = np.sum(p.omega * g) / p.total
    return float(math.sqrt(np.sum(p.omega * (g - gbar) ** 2) / p.total))


def descend(p: PhaseFieldProblem, f0: np.ndarray, cfg: MinimizeConfig) -> tuple[np.ndarray, StageResult]:
    """Projected, preconditioned gradient descent with Armijo backtracking at fixed eps."""
    K = _Preconditioner(p)
    f = p.project(np.asarray(f0, dtype=float))
    if abs(p.mass_defect(f)) > DRIFT_TOL:
        raise InvariantViolation(f"initial iterate violates the mass constraint by {p.mass_defect(f):.3g}")
    E = energy(f, p)
    history = [E]
    step = 1.0
    res = math.inf
    for it in range(1, cfg.max_iters + 1):
        gp = energy_partials(f, p)
        res = _residual(gp, p)
        if p.eps * res < cfg.tol:
            return f, StageResult(p.eps, E, it - 1, res, "gradient", history)
        Kg = K(gp)
        Kw = K(p.omega)
        lam = np.sum(p.omega * Kg) / np.sum(p.omega * Kw)
        d = -(Kg - lam * Kw)
        s = min(1.0, 2 * step)
        while True:
            trial = p.project(f + s * d)
            Et = energy(trial, p)
            if Et <= E + cfg.armijo * float(np.sum(gp * (trial - f))):
                break
            s *= 0.5
            if s < 1e-12:
                raise SolverError("line search failed", last_iterate=f, residual=res, history=history, eps=p.eps)
        if Et > E + 1e-12 * abs(E):
            raise InvariantViolation(f"energy increased from {E!r} to {Et!r}")
        drift = p.mass_defect(trial)
        if abs(drift) > DRIFT_TOL:
            raise InvariantViolation(f"mass constraint drift {drift:.3g}")
        f, E, step = trial, Et, s
        history.append(E)
        if cfg.callback is not None:
            cfg.callback(it, f, E, res)
        w = cfg.stall_window
        if len(history) > w and history[-w - 1] - E <= cfg.stall_tol * abs(E):
            return f, StageResult(p.eps, E, it, res, "stall", history)
    raise SolverError("phase-field descent did not converge", last_iterate=f, residual=res, history=history, eps=p.eps)


@dataclass
class MinimizeResult:
    field: ScalarField
    problem: PhaseFieldProblem
    stages: list

    @property
    def energy(self) -> float:
        return self.stages[-1].energy

    @property
    def perimeter_estimate(self) -> float:
        """Weighted perimeter predicted by the Gamma-limit, ``E / C0``."""
        return self.energy / C0


def anneal_schedule(eps_final: float, stages: int, eps_start: float | None = None) -> list[float]:
    if eps_start is None:
        return [eps_final * 2 ** (stages - 1 - i) for i in range(stages)]
    return [eps_start / 2 ** i for i in range(stages)]


def minimize(p: PhaseFieldProblem, init, cfg: MinimizeConfig | None = None) -> MinimizeResult:
    """Minimize ``E_eps`` subject to ``int f w = 2 alpha - 1``.

    With ``cfg.eps_stages > 1`` the problem is first solved at ``cfg.eps_start``
    (default ``p.eps * 2**(stages-1)``), then eps is halved and the previous
    iterate reused, ending at ``p.eps``.
    """
    cfg = cfg or MinimizeConfig()
    f = _values(init)
    if abs(p.mass_defect(f)) > 1e-3:
        raise ValueError("initial field violates the mass constraint by more than 1e-3")
    if cfg.eps_start is None:
        schedule = anneal_schedule(p.eps, cfg.eps_stages)
    else:
        schedule = anneal_schedule(p.eps, cfg.eps_stages, cfg.eps_start)
        schedule[-1] = p.eps
    stages = []
    for eps in schedule:
        q = p if eps == p.eps else p.with_eps(max(eps, p.eps))
        f, st = descend(q, f, cfg)
        stages.append(st)
    return MinimizeResult(ScalarField(p.grid, f, {"eps": p.eps, "alpha": p.alpha}), p, stages)


def halfspace_init(p: PhaseFieldProblem, direction, eps: float | None = None) -> np.ndarray:
    """``tanh((a.x - c) / eps)`` with ``c`` chosen so the mass constraint holds."""
    a = np.asarray(direction, dtype=float)
    a = a / np.linalg.norm(a)
    eps = eps or p.eps
    proj = p.grid.centers() @ a
    lo, hi = proj[p.active].min() - 10 * eps, proj[p.active].max() + 10 * eps
    fn = lambda c: float(np.sum(p.omega * np.tanh((proj - c) / eps)) - p.target)  # noqa: E731
    c = brentq(fn, lo, hi, xtol=1e-14)
    f = np.tanh((proj - c) / eps)
    return p.project(f)


def random_init(p: PhaseFieldProblem, rng: np.random.Generator, eps: float | None = None) -> np.ndarray:
    v = rng.standard_normal(p.grid.dim)
    return halfspace_init(p, v, eps)


def volume_fraction(f, density: Density | None = None, grid: Grid | None = None, level: float = 0.0) -> float:
    """Weighted fraction of the support where ``f > level``.

    Cells the level set crosses are split by sampling the multilinear
    interpolant of ``f`` at 16 points per axis.
    """
    if isinstance(f, ScalarField):
        grid, vals = f.grid, f.values
    else:
        vals = np.asarray(f, dtype=float)
    if grid is None:
        raise ValueError("volume_fraction needs a grid")
    if density is None:
        omega = grid.mask * grid.cell_volume
    else:
        omega = density.cell_weights(grid)
    interp = RegularGridInterpolator(grid.axes(), vals, method="linear", bounds_error=False, fill_value=None)
    pred = lambda x: interp(x.reshape(-1, grid.dim)).reshape(x.shape[:-1]) > level  # noqa: E731
    frac = _predicate_fraction(pred, grid, 16)
    return float(np.sum(omega * frac) / np.sum(omega))
