"""Experiment pipelines and atomic run persistence."""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import tempfile
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock
from threadpoolctl import threadpool_limits

from .. import __version__
from ..conjectures import (RegionLabel, cone_fit, hull_fraction, kls_check, milman_chain_check,
                           two_hyperplane_margin)
from ..convex import ConvexBody, body_from_spec
from ..errors import ConfigError, IsolabError, InvariantViolation, SolverError
from ..field import (C0, MinimizeConfig, PhaseFieldProblem, anneal_schedule, minimize, random_init,
                     volume_fraction)
from ..grid import Grid
from ..measure import Density, density_from_spec
from ..spectral import deform_family, hot_spots_check, solve_neumann
from ..stability import cross_interface, min_eigenvalue, simons_reduced, translation_test
from ..surface import Interface, contact_angle, curvature, extract, graph_fit, hausdorff_to_line, perimeter
from .config import ExperimentConfig, RegionSpec

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4


# -- canonical JSON ----------------------------------------------------------


def _canon(obj):
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canon(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _Float(float(obj))
    return obj


class _Float(float):
    pass


class _Encoder(json.JSONEncoder):
    def iterencode(self, o, _one_shot=False):
        return self._walk(o)

    def _walk(self, o):
        if isinstance(o, _Float):
            if math.isfinite(o):
                yield format(o, ".17g")
            else:
                yield json.dumps(str(o))
        elif isinstance(o, dict):
            yield "{"
            for i, k in enumerate(sorted(o)):
                if i:
                    yield ", "
                yield json.dumps(k) + ": "
                yield from self._walk(o[k])
            yield "}"
        elif isinstance(o, list):
            yield "["
            for i, v in enumerate(o):
                if i:
                    yield ", "
                yield from self._walk(v)
            yield "]"
        else:
            yield json.dumps(o)


def dumps17(obj) -> str:
    """JSON with sorted keys and every float written with 17 significant digits."""
    return "".join(_Encoder().iterencode(_canon(obj)))


def _write_json(path: Path, obj):
    path.write_text(dumps17(obj) + "\n")


# -- records --------------------------------------------------------------------


@dataclass
class RunRecord:
    run_id: str
    path: Path
    status: str
    config_digest: str
    code_version: str
    summary: dict
    summary_hash: str
    timings: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    error: dict | None = None

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.error is None else self.error["exit_code"]

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "status": self.status, "config_digest": self.config_digest,
                "code_version": self.code_version, "summary_hash": self.summary_hash,
                "timings": self.timings, "artifacts": self.artifacts, "error": self.error}


class _Context:
    """Shared per-run state handed to pipelines."""

    def __init__(self, cfg: ExperimentConfig, tmp: Path):
        self.cfg = cfg
        self.dir = tmp
        self.artifacts: list[str] = []
        self.timings: dict[str, float] = {}

    def path(self, name: str) -> Path:
        return self.dir / name

    def add(self, *paths):
        for p in paths:
            self.artifacts.append(str(Path(p).relative_to(self.dir)))

    def timed(self, label: str, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        self.timings[label] = time.perf_counter() - t0
        return out

    def pmap(self, fn, items):
        items = list(items)
        if self.cfg.workers == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as ex:
            return list(ex.map(fn, items))


def _setup(cfg: ExperimentConfig):
    """Build body and density; bad parameters are configuration errors."""
    try:
        body = body_from_spec(cfg.body.as_dict()) if cfg.body is not None else None
        dspec = cfg.density.model_dump()
        density = density_from_spec(dspec, body) if cfg.experiment not in ("spectral", "deform", "simons") else None
        if cfg.experiment == "deform":
            body_from_spec(cfg.deform.target.as_dict())
    except (ValueError, KeyError, TypeError) as err:
        raise ConfigError(f"invalid body or density: {err}") from err
    return body, density


def _grid(density: Density, body: ConvexBody | None, n: int) -> Grid:
    if density is not None and density.kind != "uniform":
        return density.grid(n)
    return Grid.covering(body, n)


# -- isoperimetric ---------------------------------------------------------------


def _minimizer(cfg: ExperimentConfig, density: Density, grid: Grid, alpha: float, ctx: _Context | None):
    eps_final = cfg.eps.final if cfg.eps.final is not None else 2 * grid.h
    p = PhaseFieldProblem(density, grid, eps_final, alpha)
    mcfg = MinimizeConfig(tol=cfg.opt.tol, max_iters=cfg.opt.max_iters, eps_start=cfg.eps.start,
                          eps_stages=cfg.eps.stages, stall_window=cfg.opt.stall_window, stall_tol=cfg.opt.stall_tol)
    sched = anneal_schedule(eps_final, cfg.eps.stages, cfg.eps.start)
    starts = cfg.isoperimetric.starts if cfg.isoperimetric is not None else 1
    seeds = np.random.SeedSequence(cfg.seed).spawn(starts)

    def one(i):
        rng = np.random.default_rng(seeds[i])
        try:
            return minimize(p, random_init(p, rng, eps=sched[0]), mcfg)
        except SolverError as err:
            return err

    results = ctx.pmap(one, range(starts)) if ctx is not None else [one(i) for i in range(starts)]
    ok = [(r.energy, i, r) for i, r in enumerate(results) if not isinstance(r, SolverError)]
    if not ok:
        raise results[0]
    best = min(ok, key=lambda t: (t[0], t[1]))
    starts_info = [{"start": i, "energy": r.energy if not isinstance(r, SolverError) else None,
                    "converged_by": [s.converged_by for s in r.stages] if not isinstance(r, SolverError) else "failed"}
                   for i, r in enumerate(results)]
    return best[2], best[1], starts_info


def _interface_summary(res, density: Density, body: ConvexBody) -> tuple[dict, Interface]:
    uniform = density.kind == "uniform"
    S = extract(res.field, 0.0, body=body)
    out = {
        "energy": res.energy,
        "perimeter_estimate": res.perimeter_estimate if not uniform else res.perimeter_estimate * density.Z,
        "length": perimeter(S),
        "weighted_perimeter": perimeter(S, density),
        "volume_fraction": volume_fraction(res.field, density),
        "components": len(S.components),
        "eps": res.problem.eps,
        "stages": [{"eps": s.eps, "energy": s.energy, "iterations": s.iterations, "converged_by": s.converged_by}
                   for s in res.stages],
    }
    if S.boundary_vertices.size:
        try:
            out["contact_angles"] = contact_angle(S, body).tolist()
        except IsolabError as err:
            out["contact_angles_error"] = str(err)
    if body.symmetric and all(not c for c in S.closed):
        d, n, c = hausdorff_to_line(S, body, through=(0.0, 0.0))
        out["hausdorff_to_diameter"] = d
        out["hausdorff_to_diameter_cells"] = d / res.field.grid.h
        gf = graph_fit(S)
        out["graph_lipschitz"] = gf.lipschitz
    cd = curvature(S, density)
    out["curvature_constancy"] = cd.constancy()
    return out, S


def run_isoperimetric(cfg, body, density, ctx: _Context) -> dict:
    body = body or density.support
    grid = _grid(density, body, cfg.grid.n)
    res, idx, starts = ctx.timed("minimize", _minimizer, cfg, density, grid, cfg.isoperimetric.alpha, ctx)
    summary, S = _interface_summary(res, density, body)
    summary.update({"alpha": cfg.isoperimetric.alpha, "best_start": idx, "starts": starts, "grid_n": cfg.grid.n})
    ctx.add(*res.field.dump(ctx.path("field")))
    ctx.add(*S.dump(ctx.path("interface")))
    return summary


# -- stability --------------------------------------------------------------------


def _stability_surface(spec, body):
    if spec.surface == "circle":
        th = 2 * math.pi * np.arange(spec.points) / spec.points
        P = np.column_stack([np.cos(th), np.sin(th)])
        return Interface.from_polyline(spec.radius * P, closed=True, normals=P), None
    if spec.surface == "segment":
        x = np.linspace(-spec.radius, spec.radius, spec.points)
        S = Interface.from_polyline(np.column_stack([x, np.zeros_like(x)]))
        return S, body or ConvexBody.disk(spec.radius)
    if spec.surface == "cross":
        return cross_interface(spec.points, spec.radius), body or ConvexBody.disk(spec.radius)
    raise ValueError(spec.surface)


def run_stability(cfg, body, density, ctx: _Context) -> dict:
    spec = cfg.stability
    if spec is None:
        from .config import StabilitySpec
        spec = StabilitySpec()
    d = None if density.kind == "uniform" else density
    if spec.surface == "minimizer":
        body = body or density.support
        grid = _grid(density, body, cfg.grid.n)
        res, _, _ = _minimizer(cfg, density, grid, spec.alpha, ctx)
        S = extract(res.field, 0.0, body=body)
        ctx.add(*S.dump(ctx.path("interface")))
        sbody = body if density.kind == "uniform" else None
    else:
        S, sbody = _stability_surface(spec, body)
    verdict = ctx.timed("min_eigenvalue", min_eigenvalue, S, d, sbody, spec.constrained)
    summary = {"surface": spec.surface, "verdict": verdict.to_dict()}
    if all(S.closed) or spec.surface == "circle":
        tt = translation_test(S, d, sbody)
        summary["translation"] = tt
    if verdict.witness is not None:
        np.savetxt(ctx.path("witness.csv"), np.column_stack([S.vertices, verdict.witness.values]),
                   delimiter=",", header="x,y,f", comments="", fmt="%.17g")
        ctx.add(ctx.path("witness.csv"))
    return summary


# -- spectral and deform -------------------------------------------------------------


def run_spectral(cfg, body, density, ctx: _Context) -> dict:
    es = ctx.timed("eigensolve", solve_neumann, body, None, cfg.spectral.k if cfg.spectral else 1, cfg.grid.n)
    e = es[0]
    directions = cfg.spectral.directions if cfg.spectral else 720
    rep = hot_spots_check(e, body, directions)
    summary = {"eigenvalues": [x.eigenvalue for x in es], "residual": e.residual, "degenerate": e.degenerate,
               "hot_spots": rep.to_dict(), "monotone": rep.monotone}
    ctx.add(*e.u.dump(ctx.path("eigenfunction")))
    if rep.nodal is not None:
        ctx.add(*rep.nodal.dump(ctx.path("nodal")))
    return summary


def run_deform(cfg, body, density, ctx: _Context) -> dict:
    target = body_from_spec(cfg.deform.target.as_dict())
    out = ctx.timed("deform", deform_family, body, target, cfg.deform.steps, cfg.grid.n)
    path = ctx.path("deform.csv")
    with open(path, "w") as fh:
        fh.write("t,lambda,margin,lipschitz\n")
        for r in out["steps"]:
            fh.write(",".join(format(float(r[k]), ".17g") for k in ("t", "lambda", "margin", "lipschitz")) + "\n")
    ctx.add(path)
    return out


# -- conjecture battery -------------------------------------------------------------


def _region_function(spec: RegionSpec):
    n = np.asarray(spec.normal, dtype=float)
    n = n / np.linalg.norm(n)
    b = np.array([-n[1], n[0]])
    if spec.kind == "halfspace":
        return lambda x: x @ n - spec.offset
    if spec.kind == "wedge":
        return lambda x: x @ n - np.linalg.norm(x, axis=-1) * math.cos(spec.half_angle)
    if spec.kind == "sinusoid":
        return lambda x: x @ n - spec.amplitude * np.sin(math.pi * spec.frequency * (x @ b))
    if spec.kind == "ball":
        return lambda x: spec.radius - np.linalg.norm(x - np.asarray(spec.center), axis=-1)
    raise ValueError(spec.kind)


def _battery_case(cfg, body, density, spec: RegionSpec, n: int, ctx) -> dict:
    body = body or density.support
    grid = _grid(density, body, n)
    if spec.kind == "minimizer":
        res, _, _ = _minimizer(cfg, density, grid, spec.alpha, None)
        E = RegionLabel.from_field(res.field, density)
    else:
        E = RegionLabel.from_function(grid, density, _region_function(spec))
    directions = cfg.battery.directions
    reports = {}
    th = two_hyperplane_margin(E, directions) if density.symmetric else None
    if th is not None:
        reports["two_hyperplane"] = th
        reports["cone_fit"] = cone_fit(E, directions, witness=th)
        reports["kls"] = kls_check(E, th)
        reports["milman_chain"] = milman_chain_check(E, th, minimizer=spec.kind == "minimizer",
                                                     t_grid=cfg.battery.t_grid)
    if density.kind == "uniform":
        reports["hull_fraction"] = hull_fraction(E, body)
    return {"name": spec.name, "grid_n": n, "alpha": E.alpha, "reports": {k: r.to_dict() for k, r in reports.items()}}


def run_battery(cfg, body, density, ctx: _Context) -> dict:
    def one(spec):
        out = _battery_case(cfg, body, density, spec, cfg.grid.n, ctx)
        bad = [k for k, r in out["reports"].items() if r["verdict"] == "violated"]
        if bad:
            # a violation may be a resolution artifact: confirm at twice the resolution
            again = _battery_case(cfg, body, density, spec, 2 * cfg.grid.n, ctx)
            out["rerun"] = {k: again["reports"][k]["verdict"] for k in bad}
            for k in bad:
                out["reports"][k]["verdict"] = again["reports"][k]["verdict"]
                out["reports"][k].setdefault("notes", []).append(
                    f"violated at n={cfg.grid.n}; re-run at n={2 * cfg.grid.n} gives {again['reports'][k]['verdict']}")
        return out

    cases = ctx.timed("battery", ctx.pmap, one, cfg.battery.cases)
    table = []
    for c in cases:
        r = c["reports"]
        table.append({"case": c["name"], "alpha": c["alpha"],
                      "b_star": r.get("two_hyperplane", {}).get("scalars", {}).get("b_star"),
                      "hull_fraction": r.get("hull_fraction", {}).get("scalars", {}).get("hull_fraction"),
                      "kls_ratio": r.get("kls", {}).get("scalars", {}).get("kls_ratio"),
                      "cone_mass": r.get("cone_fit", {}).get("scalars", {}).get("cone_mass")})
    for c in cases:
        _write_json(ctx.path(f"report_{c['name']}.json"), c)
        ctx.add(ctx.path(f"report_{c['name']}.json"))
    return {"cases": cases, "table": table}


# -- Simons ---------------------------------------------------------------------------


def run_simons(cfg, body, density, ctx: _Context) -> dict:
    spec = cfg.simons
    if spec is None:
        from .config import SimonsSpec
        spec = SimonsSpec()
    jobs = [(n, dom, bc) for n in spec.dims for dom in spec.domains for bc in spec.bcs]
    verdicts = ctx.pmap(lambda j: simons_reduced(j[0], j[1], j[2], spec.N), jobs)
    rows = [{"n": n, "domain": dom, "bc": bc, **v.to_dict()} for (n, dom, bc), v in zip(jobs, verdicts)]
    out = {"verdicts": rows}
    if spec.full_grid_check and 1 in spec.dims:
        X = cross_interface(spec.N)
        full = min_eigenvalue(X, None, ConvexBody.disk(1.0))
        reduced = simons_reduced(1, "ball", "volume_constrained", spec.N)
        out["n1_full"] = full.to_dict()
        out["n1_agree"] = bool(full.stable == reduced.stable)
    return out


PIPELINES = {
    "isoperimetric": run_isoperimetric,
    "stability": run_stability,
    "spectral": run_spectral,
    "deform": run_deform,
    "conjecture-battery": run_battery,
    "simons": run_simons,
}


# -- driver ---------------------------------------------------------------------------


def run_id_for(cfg: ExperimentConfig) -> str:
    return f"{cfg.name or cfg.experiment}-{cfg.digest()[:12]}-s{cfg.seed}"


def _exit_code(err: BaseException) -> int:
    if isinstance(err, ConfigError):
        return EXIT_CONFIG
    if isinstance(err, InvariantViolation):
        return EXIT_INVARIANT
    return EXIT_SOLVER


def run(cfg: ExperimentConfig, out_dir=None) -> RunRecord:
    """Execute the pipeline for ``cfg`` and persist it under ``out_dir/<run_id>``.

    Artifacts are written to a temporary sibling directory that is renamed
    into place at the end, so the final path never holds a partial run.
    Failed runs land under ``out_dir/failures/<run_id>``.
    """
    body, density = _setup(cfg)  # config errors surface before anything is written
    out = Path(out_dir or cfg.out or "runs")
    out.mkdir(parents=True, exist_ok=True)
    rid = run_id_for(cfg)
    with FileLock(str(out / f".{rid}.lock")):
        tmp = Path(tempfile.mkdtemp(prefix=f".{rid}.", dir=out))
        ctx = _Context(cfg, tmp)
        error = None
        t0 = time.perf_counter()
        try:
            with threadpool_limits(limits=1):
                summary = PIPELINES[cfg.experiment](cfg, body, density, ctx)
        except Exception as err:  # captured into the record
            summary = {}
            error = {"type": type(err).__name__, "message": str(err), "exit_code": _exit_code(err),
                     "traceback": traceback.format_exc()}
        ctx.timings["total"] = time.perf_counter() - t0
        summary = {"experiment": cfg.experiment, "seed": cfg.seed, "config_digest": cfg.digest(),
                   "code_version": __version__, "status": "ok" if error is None else "failed", "result": summary}
        text = dumps17(summary) + "\n"
        (tmp / "summary.json").write_text(text)
        (tmp / "config.json").write_text(dumps17(cfg.model_dump(mode="json")) + "\n")
        digest = hashlib.sha256(text.encode()).hexdigest()
        rec = RunRecord(rid, out / rid, summary["status"], cfg.digest(), __version__, summary["result"], digest,
                        ctx.timings, ctx.artifacts, error)
        if error is not None:
            rec.path = out / "failures" / rid
            rec.path.parent.mkdir(exist_ok=True)
        _write_json(tmp / "record.json", rec.to_dict())
        if rec.path.exists():
            shutil.rmtree(rec.path)
        os.rename(tmp, rec.path)
    return rec


def load_record(run_dir) -> dict:
    run_dir = Path(run_dir)
    rec = json.loads((run_dir / "record.json").read_text())
    rec["summary"] = json.loads((run_dir / "summary.json").read_text())
    rec["config"] = json.loads((run_dir / "config.json").read_text())
    return rec
