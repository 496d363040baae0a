"""Second variation of weighted area on interfaces and stability verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, sparse
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .convex import ConvexBody
from .errors import ConstraintError, SolverError
from .measure import Density
from .surface import Interface, curvature

MEAN_ZERO_TOL = 1e-8


@dataclass
class SurfaceFunction:
    interface: Interface | None
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("surface function values must be finite")


@dataclass
class StabilityVerdict:
    min_rayleigh: float
    stable: bool
    witness: SurfaceFunction | None
    constraint_residual: float
    tolerance: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"min_rayleigh": self.min_rayleigh, "stable": self.stable, "tolerance": self.tolerance,
               "constraint_residual": self.constraint_residual}
        out.update(self.meta)
        return out


# -- discrete form on polylines ------------------------------------------------


def _weights(d: Density | None, x: np.ndarray) -> np.ndarray:
    if d is None:
        return np.ones(len(x))
    if d.kind == "uniform":
        return np.full(len(x), 1.0 / d.Z)
    return d.pdf(x)


@dataclass
class DiscreteForm:
    """Assembled ``Q(f) = f^T A f`` and mass ``f^T M f`` on the vertices of an interface.

    ``A = K - diag(potential * m) - diag(boundary)`` with the weighted edge
    stiffness K, lumped weighted mass m, potential ``|A_S|^2 + hess V(nu, nu)``,
    and the boundary term ``A_bd(nu, nu) w`` at contact points.
    """

    K: sparse.csr_matrix
    mass: np.ndarray
    potential: np.ndarray
    boundary: np.ndarray
    A2: np.ndarray
    hessVnn: np.ndarray

    @property
    def A(self) -> sparse.csr_matrix:
        return (self.K - sparse.diags(self.potential * self.mass + self.boundary)).tocsr()

    @property
    def M(self) -> sparse.csr_matrix:
        return sparse.diags(self.mass).tocsr()

    def Q(self, f) -> float:
        f = np.asarray(f, dtype=float)
        return float(f @ (self.A @ f))

    def bilinear(self, f, g) -> float:
        return float(np.asarray(f) @ (self.A @ np.asarray(g)))

    def mean(self, f) -> float:
        """``int_S f w dH``."""
        return float(np.sum(self.mass * f))


def assemble(S: Interface, d: Density | None = None, body: ConvexBody | None = None,
             curvature_method: str | None = None) -> DiscreteForm:
    V = S.vertices
    n = len(V)
    seg = S.segments
    a, b = V[seg[:, 0]], V[seg[:, 1]]
    ell = np.linalg.norm(b - a, axis=1)
    we = _weights(d, 0.5 * (a + b))
    k = we / ell
    rows = np.concatenate([seg[:, 0], seg[:, 1], seg[:, 0], seg[:, 1]])
    cols = np.concatenate([seg[:, 0], seg[:, 1], seg[:, 1], seg[:, 0]])
    vals = np.concatenate([k, k, -k, -k])
    K = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    wv = _weights(d, V)
    mass = wv * S.vertex_lengths()
    cd = curvature(S, d, method=curvature_method)
    if d is None or d.kind == "uniform":
        hnn = np.zeros(n)
    else:
        H = d.hess_V(V)
        hnn = np.einsum("ni,nij,nj->n", S.normals, H, S.normals)
    boundary = np.zeros(n)
    if body is not None and S.boundary_vertices.size:
        bv = S.boundary_vertices
        boundary[bv] = body.boundary_curvature(V[bv]) * wv[bv]
    return DiscreteForm(K, mass, cd.A2 + hnn, boundary, cd.A2, hnn)


def second_variation(S: Interface, d: Density | None, f, body: ConvexBody | None = None,
                     require_mean_zero: bool = False, form: DiscreteForm | None = None) -> float:
    """``int_S (|grad_S f|^2 - (|A_S|^2 + hess V(nu,nu)) f^2) w - sum_{contact} A_bd f^2 w``."""
    form = form or assemble(S, d, body)
    vals = f.values if isinstance(f, SurfaceFunction) else np.asarray(f, dtype=float)
    if require_mean_zero:
        resid = abs(form.mean(vals)) / max(np.sum(form.mass * np.abs(vals)), 1e-300)
        if resid > MEAN_ZERO_TOL:
            raise ConstraintError(f"test function is not mean-zero (relative residual {resid:.3g})")
    return form.Q(vals)


def tangential_gradient(S: Interface, f) -> np.ndarray:
    """Per-vertex arclength derivative by three-point nonuniform differences."""
    f = np.asarray(f, dtype=float)
    out = np.zeros(len(S.vertices))
    for comp, closed in zip(S.components, S.closed):
        comp = np.asarray(comp)
        P = S.vertices[comp]
        F = f[comp]
        if closed:
            hm = np.linalg.norm(P - np.roll(P, 1, axis=0), axis=1)
            hp = np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)
            fm, fp = np.roll(F, 1), np.roll(F, -1)
            out[comp] = (-hp / (hm * (hm + hp)) * fm + (hp - hm) / (hm * hp) * F + hm / (hp * (hm + hp)) * fp)
        else:
            hm = np.linalg.norm(P[1:-1] - P[:-2], axis=1)
            hp = np.linalg.norm(P[2:] - P[1:-1], axis=1)
            g = np.empty(len(P))
            g[1:-1] = (-hp / (hm * (hm + hp)) * F[:-2] + (hp - hm) / (hm * hp) * F[1:-1]
                       + hm / (hp * (hm + hp)) * F[2:])
            g[0] = (F[1] - F[0]) / np.linalg.norm(P[1] - P[0])
            g[-1] = (F[-1] - F[-2]) / np.linalg.norm(P[-1] - P[-2])
            out[comp] = g
    return out


def translation_test(S: Interface, d: Density | None, body: ConvexBody | None = None) -> dict:
    """Second variation of the translation fields ``f_j = e_j . nu`` and the identities they satisfy."""
    if S.normals is None or len(S.normals) != len(S.vertices):
        raise ValueError("interface has no normals")
    form = assemble(S, d, body)
    fs = [S.normals[:, j] for j in range(S.dim)]
    Qs = [form.Q(f) for f in fs]
    sum_sq = sum(f ** 2 for f in fs)
    grad_sq = sum(tangential_gradient(S, f) ** 2 for f in fs)
    interior = np.ones(len(S.vertices), dtype=bool)
    interior[S.boundary_vertices] = False
    grad_resid = np.abs(grad_sq - form.A2)[interior]
    target = -float(np.sum(form.hessVnn * form.mass)) - float(np.sum(form.boundary))
    total = float(sum(Qs))
    means = [form.mean(f) for f in fs]
    return {
        "Q": Qs,
        "sum_Q": total,
        "sum_rule_target": target,
        "sum_rule_rel_error": abs(total - target) / max(abs(target), 1e-300),
        "max_sum_sq_residual": float(np.max(np.abs(sum_sq - 1.0))),
        "max_grad_identity_residual": float(grad_resid.max()) if grad_resid.size else 0.0,
        "weighted_length": float(form.mass.sum()),
        "means": means,
        "some_negative": bool(min(Qs) < 0),
    }


# -- constrained minimum Rayleigh quotient ------------------------------------


def _gershgorin_lower(A: sparse.csr_matrix, mass: np.ndarray) -> float:
    diag = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min((diag - off) / mass))


def constrained_min_eig(A: sparse.spmatrix, mass: np.ndarray, c: np.ndarray | None, block: int = 6,
                        tol: float = 1e-10, max_iter: int = 3000, rng: np.random.Generator | None = None):
    """Smallest eigenpair of ``A v = lam M v`` on ``{c . v = 0}`` (M = diag(mass)).

    Shifted block inverse iteration with Rayleigh-Ritz.  The shift sits below
    the Gershgorin bound so the shifted operator is positive definite; the
    constraint enters through a bordered (KKT) solve, which deflates the
    direction it excludes.
    """
    n = A.shape[0]
    A = sparse.csr_matrix(A)
    sigma = _gershgorin_lower(A, mass) - 1.0
    As = (A - sigma * sparse.diags(mass)).tocsc()
    if c is not None:
        c = np.asarray(c, dtype=float)
        kkt = sparse.bmat([[As, sparse.csc_matrix(c[:, None])], [sparse.csc_matrix(c[None, :]), None]]).tocsc()
    else:
        kkt = As
    lu = splu(kkt)
    dof = n - (1 if c is not None else 0)
    p = max(1, min(block, dof))
    rng = rng or np.random.default_rng(0)
    X = rng.standard_normal((n, p))
    history = []
    lam = math.nan

    def solve(B):
        if c is None:
            return lu.solve(B)
        rhs = np.vstack([B, np.zeros((1, B.shape[1]))])
        return lu.solve(rhs)[:n]

    def project(X):
        if c is None:
            return X
        # M-orthogonal projection onto {c . x = 0} is x - M^{-1} c (c.x) / (c M^{-1} c)
        z = c / mass
        return X - np.outer(z, c @ X) / (c @ z)

    X = project(X)
    for it in range(max_iter):
        Y = solve(mass[:, None] * X)
        # Rayleigh-Ritz in the M inner product
        G = Y.T @ (mass[:, None] * Y)
        Hm = Y.T @ (A @ Y)
        w, U = _gen_eigh(Hm, G)
        X = Y @ U
        X /= np.sqrt(np.sum(mass[:, None] * X ** 2, axis=0))
        lam = float(w[0])
        r = A @ X[:, 0] - lam * mass * X[:, 0]
        if c is not None:
            z = c / mass
            r = r - c * (z @ r) / (c @ z)
        res = float(np.sqrt(np.sum(r ** 2 / mass)))
        history.append(res)
        if res <= tol * max(1.0, abs(lam)):
            return lam, X[:, 0], history
    raise SolverError("inverse iteration stagnated", residual_history=history, last_value=lam)


def _gen_eigh(H, G):
    from scipy.linalg import eigh

    H = 0.5 * (H + H.T)
    G = 0.5 * (G + G.T)
    return eigh(H, G)


def _coarsen(S: Interface) -> Interface:
    keep = []
    comps = []
    offset = 0
    for comp, closed in zip(S.components, S.closed):
        comp = np.asarray(comp)
        idx = comp[::2]
        if not closed and idx[-1] != comp[-1]:
            idx = np.append(idx, comp[-1])
        keep.append(idx)
        comps.append(np.arange(offset, offset + len(idx)))
        offset += len(idx)
    keep = np.concatenate(keep)
    remap = {int(v): i for i, v in enumerate(keep)}
    bv = [remap[int(v)] for v in S.boundary_vertices if int(v) in remap]
    lc = None if S.level_curvature is None else S.level_curvature[keep]
    return Interface(S.vertices[keep], S.normals[keep], comps, list(S.closed), np.array(bv, dtype=int),
                     h=None if S.h is None else 2 * S.h, level_curvature=lc, body=S.body)


def min_eigenvalue(S: Interface, d: Density | None, body: ConvexBody | None = None, constrained: bool = True,
                   richardson: bool = True, order: float = 2.0) -> StabilityVerdict:
    """Smallest Rayleigh quotient ``Q(f) / int f^2 w`` over weighted mean-zero f.

    ``stable`` compares it with ``-10 * err``, where ``err`` is a Richardson
    estimate from the same interface with every other vertex dropped.
    """
    form = assemble(S, d, body)
    c = form.mass if constrained else None
    lam, v, hist = constrained_min_eig(form.A, form.mass, c)
    tol = 0.0
    lam_coarse = None
    if richardson:
        C = _coarsen(S)
        if min(len(comp) for comp in C.components) >= 3:
            cf = assemble(C, d, body)
            lam_coarse, _, _ = constrained_min_eig(cf.A, cf.mass, cf.mass if constrained else None)
            tol = 10 * abs(lam - lam_coarse) / (2 ** order - 1)
    resid = abs(form.mean(v)) / max(float(np.sum(form.mass * np.abs(v))), 1e-300) if constrained else 0.0
    meta = {"resolution": len(S.vertices), "coarse_value": lam_coarse, "iterations": len(hist),
            "constrained": constrained}
    return StabilityVerdict(lam, bool(lam >= -tol), SurfaceFunction(S, v), resid, tol, meta)


# -- reduced Simons-cone analysis ---------------------------------------------


def _sphere_area(n: int) -> float:
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def _reduced_blocks(n: int, N: int, grading: float = 1.5):
    """P1 finite elements for the radial profile ``v = r^{n-1} g`` on (0, 1].

    With this substitution the weight disappears.  Degree-0 and degree-1 modes
    have potentials ``c0 / r^2`` and ``c1 / r^2`` with ``c0 = (n-1)(n-4)`` and
    ``c1 = (n-1)(n-2)``, plus a boundary term ``-(n-1) v(1)^2`` from the
    substitution.  Returns nodes, stiffness, mass, the two potential matrices,
    and the load vector of ``int v r^{n-1}`` (the mean-zero constraint).
    """
    r = np.linspace(0.0, 1.0, N + 1) ** grading
    gx, gw = np.polynomial.legendre.leggauss(6)
    K = np.zeros((N + 1, N + 1))
    Mm = np.zeros_like(K)
    P = np.zeros_like(K)
    load = np.zeros(N + 1)
    for e in range(N):
        a, b = r[e], r[e + 1]
        L = b - a
        x = a + (gx + 1) * L / 2
        wq = gw * L / 2
        phi = np.vstack([(b - x) / L, (x - a) / L])
        dphi = np.array([-1 / L, 1 / L])
        idx = [e, e + 1]
        K[np.ix_(idx, idx)] += np.outer(dphi, dphi) * L
        Mm[np.ix_(idx, idx)] += (phi * wq) @ phi.T
        P[np.ix_(idx, idx)] += (phi * (wq / x ** 2)) @ phi.T
        load[idx] += phi @ (wq * x ** (n - 1))
    return r, K, Mm, P, load


def _reduced_min(n: int, N: int, degree: int, bc: str, boundary_curvature: float = 1.0) -> tuple[float, np.ndarray, np.ndarray]:
    from scipy.linalg import eigh, null_space

    r, K, Mm, P, load = _reduced_blocks(n, N)
    coef = (n - 1) * (n - 4) if degree == 0 else (n - 1) * (n - 2)
    A = K + coef * P
    A[-1, -1] -= n - 1
    if bc == "volume_constrained":
        A[-1, -1] -= boundary_curvature
    keep = np.arange(N + 1)
    if n >= 2:
        keep = keep[1:]  # v(0) = 0
    if bc == "boundary_fixed":
        keep = keep[:-1]
    A, Mm, load = A[np.ix_(keep, keep)], Mm[np.ix_(keep, keep)], load[keep]
    if bc == "volume_constrained" and degree == 0:
        Z = null_space(load[None, :])
        w, U = eigh(Z.T @ A @ Z, Z.T @ Mm @ Z)
        v = Z @ U[:, 0]
    else:
        w, U = eigh(A, Mm)
        v = U[:, 0]
    full = np.zeros(N + 1)
    full[keep] = v
    return float(w[0]), r, full


def translation_area(n: int, tau: float, domain: str = "ball") -> float:
    """Area of the translated cone ``(S + tau e) \\cap Omega`` in units of ``sqrt(2) |S^{n-1}|``.

    ``S = {|x| = |y|}`` in R^{2n}, e a unit vector in the x factor.  On S the
    area element is ``sqrt(2) |x|^{n-1} dx dsigma(y-hat)``, so the area is a
    weighted volume of admissible x, computed in polar coordinates about e.
    ``domain='ball'``: ``|x + tau e|^2 + |x|^2 < 1``.  ``domain='hull'``:
    ``|x + tau e| < 1/sqrt(2)`` and ``|x| < 1/sqrt(2)``.
    """
    a = 1 / math.sqrt(2)

    def rho_max(cpsi):
        if domain == "ball":
            # 2 rho^2 + 2 rho tau cos + tau^2 = 1
            disc = (tau * cpsi) ** 2 - 2 * (tau ** 2 - 1)
            return max(0.0, (-tau * cpsi + math.sqrt(disc)) / 2)
        disc = (tau * cpsi) ** 2 - (tau ** 2 - a * a)
        root = -tau * cpsi + math.sqrt(max(disc, 0.0))
        return max(0.0, min(a, root))

    m = 2 * n - 1
    if n == 1:
        # x is a signed scalar; both directions cos(psi) = +-1
        return float(sum(rho_max(cp) ** m / m for cp in (1.0, -1.0)) / 2)
    sn2 = _sphere_area(n - 1)
    fn = lambda psi: math.sin(psi) ** (n - 2) * rho_max(math.cos(psi)) ** m / m  # noqa: E731
    val, _ = integrate.quad(fn, 0, math.pi, epsabs=1e-14, epsrel=1e-12, limit=200)
    return float(sn2 * val / _sphere_area(n))


def translation_second_derivative(n: int, step: float = 1e-3) -> float:
    """``A''(0)`` of the translated-cone area in the ball, by central differences, scaled to true area."""
    f = lambda t: translation_area(n, t, "ball")  # noqa: E731
    d2 = (f(step) - 2 * f(0.0) + f(-step)) / step ** 2
    return d2 * math.sqrt(2) * _sphere_area(n) * _sphere_area(n)


def reduced_translation_Q(n: int) -> float:
    """Q of ``f = e . nu`` on the cone in the unit ball from the reduced form.

    The degree-1 angular energy cancels ``|A_S|^2`` exactly, leaving only the
    boundary term ``-int_{S cap dB} f^2`` with ``f^2`` averaging ``1/(2n)``.
    """
    link = (2 ** (-(n - 1) / 2) * _sphere_area(n)) ** 2
    return -link / (2 * n)


def simons_reduced(n: int, domain: str = "ball", bc: str = "volume_constrained", N: int = 400) -> StabilityVerdict:
    """Stability of ``E = {|x| < |y|}`` cut by the cone ``|x| = |y|`` in R^{2n}.

    Perturbations are split into spherical-harmonic degree 0 and degree 1 in
    the x factor times a radial profile.  In the ball the volume-constrained
    problem imposes weighted mean zero on degree 0 (degree 1 is odd, so mean
    zero automatically) and carries the boundary term of the unit sphere;
    ``boundary_fixed`` sets the profile to zero at r = 1.  The hull of
    ``S cap B`` is the product of two balls of radius 1/sqrt(2); its boundary
    is singular where S meets it, and translations decrease area at first
    order there, which is reported as ``min_rayleigh = -inf``.
    """
    if not isinstance(n, (int, np.integer)) or n < 1 or n > 16:
        raise ValueError("simons_reduced supports integer 1 <= n <= 16")
    if domain not in ("ball", "hull"):
        raise ValueError("domain must be 'ball' or 'hull'")
    if bc not in ("volume_constrained", "boundary_fixed"):
        raise ValueError("bc must be 'volume_constrained' or 'boundary_fixed'")
    meta = {"n": int(n), "domain": domain, "bc": bc, "resolution": N}
    if domain == "hull" and bc == "volume_constrained":
        slope = hull_translation_slope(n)
        meta.update({"first_order_area_slope": slope, "mode": "translation"})
        return StabilityVerdict(-math.inf, False, None, 0.0, 0.0, meta)
    # hull with fixed boundary is the ball problem: S cap hull = S cap B
    vals = {}
    for deg in (0, 1):
        lam, r, v = _reduced_min(n, N, deg, bc)
        lam2, _, _ = _reduced_min(n, N // 2, deg, bc)
        vals[deg] = (lam, lam2, r, v)
    deg = min(vals, key=lambda k: vals[k][0])
    lam, lam2, r, v = vals[deg]
    # a negative value that keeps doubling under refinement means the form is unbounded below
    unbounded = bool(lam < 0 and lam < 2 * lam2)
    tol = 0.0 if unbounded else 10 * abs(lam - lam2) / 3
    meta.update({"mode": f"degree{deg}", "degree0": vals[0][0], "degree1": vals[1][0], "coarse_value": lam2,
                 "unbounded_below": unbounded})
    return StabilityVerdict(lam, bool(not unbounded and lam >= -tol), SurfaceFunction(None, v), 0.0, tol, meta)


def hull_translation_slope(n: int, step: float = 1e-4) -> float:
    """One-sided derivative ``A'(0+)`` of the translated-cone area inside the hull (true area units)."""
    scale = math.sqrt(2) * _sphere_area(n) * _sphere_area(n)
    return (translation_area(n, step, "hull") - translation_area(n, 0.0, "hull")) / step * scale


def robin_ground_state(curv: float = 1.0) -> float:
    """Lowest eigenvalue of ``-g'' = lam g`` on (0,1), ``g'(0)=0``, ``g'(1) = curv g(1)``; negative."""
    k = brentq(lambda k: k * math.tanh(k) - curv, 1e-9, 50)
    return -k * k


def cross_interface(arm_points: int = 400, radius: float = 1.0) -> Interface:
    """Four radial arms along the diagonals of the disk: the n = 1 cone ``|x| = |y|``.

    Arms are separate components (no coupling at the singular vertex), each
    running from near the center to the boundary circle.  Normals point out
    of ``E = {|x| < |y|}``.
    """
    t = (np.arange(arm_points) + 0.5) / arm_points * radius
    t[-1] = radius
    verts, normals, comps, bverts = [], [], [], []
    off = 0
    for sx in (1, -1):
        for sy in (1, -1):
            u = np.array([sx, sy]) / math.sqrt(2)
            pts = np.outer(t, u)
            # E = {|x| < |y|}; its outward normal on the arm points toward growing |x|
            nu = np.array([sx, -sy]) / math.sqrt(2)
            verts.append(pts)
            normals.append(np.tile(nu, (arm_points, 1)))
            comps.append(np.arange(off, off + arm_points))
            bverts.append(off + arm_points - 1)
            off += arm_points
    return Interface(np.vstack(verts), np.vstack(normals), comps, [False] * 4, np.array(bverts),
                     h=radius / arm_points)
