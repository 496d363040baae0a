"""Render a finished run into SVG overlays and a plain-text summary."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..convex import body_from_spec  # noqa: E402
from .runner import load_record  # noqa: E402

plt.rcParams["svg.hashsalt"] = "isolab"


def _save(fig, path: Path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _read_curve(path: Path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["x"]), float(r["y"])] for r in rows]) if rows else np.zeros((0, 2))


def _components(run_dir: Path, stem: str):
    import json

    pts = _read_curve(run_dir / f"{stem}.csv")
    topo = json.loads((run_dir / f"{stem}.json").read_text())
    return [pts[np.asarray(c, dtype=int)] for c in topo["components"]], topo["closed"]


def _outline(config: dict):
    spec = config.get("body")
    if spec:
        spec = {k: v for k, v in spec.items() if v is not None}
        body = body_from_spec(spec)
        v = body.vertices
        return np.vstack([v, v[:1]])
    # unbounded densities: draw the circle carrying most of the mass
    th = np.linspace(0, 2 * math.pi, 361)
    return 3.0 * np.column_stack([np.cos(th), np.sin(th)])


def _axes(outline):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(outline[:, 0], outline[:, 1], color="black", lw=1)
    ax.set_aspect("equal")
    return fig, ax


def _draw_halfspace(ax, a, c, extent, **kw):
    a = np.asarray(a, dtype=float)
    b = np.array([-a[1], a[0]])
    s = np.array([-extent, extent])
    for off in (c, -c):
        p = off * a[None, :] + s[:, None] * b[None, :]
        ax.plot(p[:, 0], p[:, 1], **kw)


def _draw_cone(ax, axis, beta, extent, **kw):
    th0 = math.atan2(axis[1], axis[0])
    for sgn in (1, -1):
        for t in (th0 + beta, th0 - beta):
            ax.plot([0, sgn * extent * math.cos(t)], [0, sgn * extent * math.sin(t)], **kw)


def _flatten(prefix: str, obj, out: list, depth: int = 0):
    if isinstance(obj, dict) and depth < 3:
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else k, obj[k], out, depth + 1)
    elif isinstance(obj, (int, float, str, bool)) or obj is None:
        out.append(f"{prefix} = {obj}")
    elif isinstance(obj, list) and len(obj) <= 8 and all(isinstance(v, (int, float)) for v in obj):
        out.append(f"{prefix} = {obj}")


def report(run_dir) -> Path:
    """Write ``<run_dir>/report/`` and return its path; missing artifacts are listed, not fatal."""
    run_dir = Path(run_dir)
    rec = load_record(run_dir)
    out = run_dir / "report"
    out.mkdir(exist_ok=True)
    summary, config = rec["summary"], rec["config"]
    result = summary.get("result", {})
    kind = summary["experiment"]
    produced, absent = [], []
    for a in rec.get("artifacts", []):
        (produced if (run_dir / a).exists() else absent).append(a)
    outline = _outline(config)
    extent = float(np.abs(outline).max()) * 1.1

    curves = [(stem, color) for stem, color in (("interface", "tab:blue"), ("nodal", "tab:red"))
              if (run_dir / f"{stem}.csv").exists()]
    if kind in ("isoperimetric", "spectral", "stability"):
        fig, ax = _axes(outline)
        for stem, color in curves:
            comps, _ = _components(run_dir, stem)
            for P in comps:
                ax.plot(P[:, 0], P[:, 1], color=color, lw=1.5, label=stem)
        if kind == "spectral":
            d = result.get("hot_spots", {})
            for key, mk in (("argmax", "^"), ("argmin", "v")):
                if key in d:
                    ax.plot(*d[key], marker=mk, color="black")
        _save(fig, out / "overlay.svg")
        produced.append("report/overlay.svg")
        if not curves:
            absent.append("interface.csv")

    if kind == "deform":
        steps = result.get("steps", [])
        t = [s["t"] for s in steps]
        for key, label in (("margin", "monotone margin"), ("lipschitz", "nodal Lipschitz constant")):
            fig, ax = plt.subplots(figsize=(5, 3))
            ax.plot(t, [s[key] for s in steps], marker="o")
            ax.set_xlabel("t")
            ax.set_ylabel(label)
            _save(fig, out / f"{key}.svg")
            produced.append(f"report/{key}.svg")

    if kind == "conjecture-battery":
        lines = ["| case | alpha | b* | hull fraction | kls ratio | cone mass |", "|---|---|---|---|---|---|"]

        def fmt(v):
            return "-" if v is None else f"{float(v):.4f}"

        for row in result.get("table", []):
            lines.append(f"| {row['case']} | {fmt(row['alpha'])} | {fmt(row['b_star'])} | "
                         f"{fmt(row['hull_fraction'])} | {fmt(row['kls_ratio'])} | {fmt(row['cone_mass'])} |")
        (out / "table.md").write_text("\n".join(lines) + "\n")
        produced.append("report/table.md")
        for case in result.get("cases", []):
            r = case["reports"]
            fig, ax = _axes(outline)
            th = r.get("two_hyperplane", {}).get("scalars")
            if th and th["b_star"] > 0:
                _draw_halfspace(ax, th["direction"], th["offset"], extent, color="tab:green", lw=1)
            cf = r.get("cone_fit", {}).get("scalars")
            if cf and cf.get("kind") == "cone" and cf.get("axis") is not None:
                _draw_cone(ax, cf["axis"], cf["half_angle"], extent, color="tab:orange", lw=1)
            ax.set_title(case["name"])
            _save(fig, out / f"witness_{case['name']}.svg")
            produced.append(f"report/witness_{case['name']}.svg")

    text = [f"run {rec['run_id']}", f"experiment {kind}", f"status {summary['status']}",
            f"summary hash {rec['summary_hash']}", ""]
    if rec.get("error"):
        text += [f"error {rec['error']['type']}: {rec['error']['message']}", ""]
    flat: list[str] = []
    _flatten("", result, flat)
    text += flat
    text += ["", "artifacts:"] + [f"  {a}" for a in produced]
    text += ["absent:"] + [f"  {a}" for a in absent] if absent else []
    (out / "summary.txt").write_text("\n".join(text) + "\n")
    return out
