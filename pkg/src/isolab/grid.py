"""Masked Cartesian grids and scalar fields on them."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convex import ConvexBody
from .errors import DimensionError, ResolutionError

MIN_CELLS = 16
DEFAULT_SUBSAMPLES = 4


def _subcell_offsets(dim: int, k: int) -> np.ndarray:
    """Offsets (in units of h) of a ``k**dim`` tensor sub-sampling of a unit cell."""
    base = (np.arange(k) + 0.5) / k - 0.5
    mesh = np.meshgrid(*([base] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def inside_fraction(body: ConvexBody, centers: np.ndarray, h: float, subsamples: int = DEFAULT_SUBSAMPLES) -> np.ndarray:
    """Fraction of each cell (given by its center) inside ``body``.

    Cells well inside or outside are classified from their center; cells within
    half a diagonal of the boundary use ``subsamples**dim`` sample points.
    """
    dim = centers.shape[-1]
    flat = centers.reshape(-1, dim)
    dist = body.boundary_distance(flat)
    half_diag = 0.5 * h * math.sqrt(dim) * 1.0001
    frac = (dist > 0).astype(float)
    near = np.abs(dist) <= half_diag
    if near.any():
        offs = _subcell_offsets(dim, subsamples) * h
        pts = flat[near][:, None, :] + offs[None, :, :]
        hit = body.contains(pts.reshape(-1, dim)).reshape(pts.shape[0], -1)
        frac[near] = hit.mean(axis=1)
    return frac.reshape(centers.shape[:-1])


@dataclass
class Grid:
    """Uniform cell-centered grid with a per-cell inside fraction ``mask``."""

    origin: np.ndarray
    h: float
    shape: tuple
    mask: np.ndarray
    body: ConvexBody | None = None
    subsamples: int = DEFAULT_SUBSAMPLES

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.shape = tuple(int(s) for s in self.shape)
        self.mask = np.asarray(self.mask, dtype=float)
        if self.h <= 0:
            raise ValueError("grid spacing must be positive")
        if self.mask.shape != self.shape:
            raise DimensionError("mask shape does not match grid shape")
        if self.mask.min() < 0 or self.mask.max() > 1:
            raise ValueError("mask values must lie in [0, 1]")
        if not np.any(self.mask == 1.0):
            raise ResolutionError("grid has no fully interior cell")

    @classmethod
    def covering(cls, body: ConvexBody, n: int, subsamples: int = DEFAULT_SUBSAMPLES) -> "Grid":
        """Grid with ``n`` cells across the longest side of the body's bounding box."""
        lo, hi = body.bbox
        extent = hi - lo
        h = float(extent.max() / n)
        counts = np.maximum(1, np.ceil(extent / h - 1e-9)).astype(int)
        pad = counts * h - extent
        origin = lo - pad / 2
        grid = cls(origin, h, tuple(counts), np.ones(tuple(counts)), body=None, subsamples=subsamples)
        mask = inside_fraction(body, grid.centers(), h, subsamples)
        return cls(origin, h, tuple(counts), mask, body=body, subsamples=subsamples)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    def axes(self) -> list[np.ndarray]:
        return [self.origin[i] + (np.arange(s) + 0.5) * self.h for i, s in enumerate(self.shape)]

    def centers(self) -> np.ndarray:
        """Cell centers with shape ``shape + (dim,)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def active(self) -> np.ndarray:
        return self.mask > 0

    def check_resolution(self, minimum: int = MIN_CELLS):
        if min(self.shape) < minimum:
            raise ResolutionError(f"grid too coarse: {self.shape} has fewer than {minimum} cells across")

    def mask_digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.mask).tobytes()).hexdigest()

    def header(self) -> dict:
        return {"dims": self.dim, "shape": list(self.shape), "spacing": self.h,
                "origin": self.origin.tolist(), "mask_digest": self.mask_digest()}

    def index_of(self, x) -> tuple:
        """Index of the cell containing point ``x`` (clipped to the grid)."""
        idx = np.floor((np.asarray(x, dtype=float) - self.origin) / self.h).astype(int)
        return tuple(np.clip(idx, 0, np.array(self.shape) - 1))


@dataclass
class ScalarField:
    """One value per grid cell."""

    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise DimensionError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field values must be finite")

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, fn(grid.centers()))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), dict(self.meta))

    def dump(self, path) -> tuple[Path, Path]:
        """Write ``<path>.bin`` (row-major float64) and a ``<path>.json`` header."""
        path = Path(path)
        bin_path = path.with_suffix(".bin")
        json_path = path.with_suffix(".json")
        np.ascontiguousarray(self.values, dtype="<f8").tofile(bin_path)
        header = self.grid.header()
        header["dtype"] = "float64-le"
        header["order"] = "row-major"
        header["meta"] = self.meta
        json_path.write_text(json.dumps(header, indent=2, sort_keys=True))
        return bin_path, json_path

    @staticmethod
    def load_values(path) -> tuple[np.ndarray, dict]:
        """Read a dump back; returns ``(values, header)`` (the mask itself is not stored)."""
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        values = np.fromfile(path.with_suffix(".bin"), dtype="<f8").reshape(header["shape"])
        return values, header
