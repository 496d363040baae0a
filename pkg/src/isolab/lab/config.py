"""Experiment configuration: TOML tables validated into pydantic models."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigError

Kind = Literal["isoperimetric", "stability", "spectral", "deform", "conjecture-battery", "simons"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BodySpec(_Strict):
    kind: Literal["square", "box", "disk", "ellipse", "regular_polygon", "polygon", "hull-of-points"]
    half_width: float = 1.0
    radius: float = 1.0
    m: int = 256
    center: tuple[float, float] = (0.0, 0.0)
    lo: Optional[tuple[float, float]] = None
    hi: Optional[tuple[float, float]] = None
    a: Optional[float] = None
    b: Optional[float] = None
    rotation: float = 0.0
    points: Optional[list[tuple[float, float]]] = None
    symmetric: Optional[bool] = None

    def as_dict(self) -> dict:
        return self.model_dump(exclude_none=True)


class DensitySpec(_Strict):
    kind: Literal["uniform", "gaussian", "power_exp", "product_1d"] = "uniform"
    params: dict = Field(default_factory=dict)
    truncation_mass: float = 1e-10


class GridSpec(_Strict):
    n: int = Field(256, ge=16)


class EpsSpec(_Strict):
    final: Optional[float] = None  # default 2h
    start: Optional[float] = None
    stages: int = Field(3, ge=1)


class OptSpec(_Strict):
    tol: float = 1e-4
    max_iters: int = 4000
    stall_window: int = 50
    stall_tol: float = 1e-5


class IsoperimetricSpec(_Strict):
    alpha: float = Field(gt=0.0, lt=1.0)
    starts: int = Field(4, ge=1)


class StabilitySpec(_Strict):
    surface: Literal["circle", "segment", "cross", "minimizer"] = "circle"
    radius: float = 1.0
    points: int = 400
    constrained: bool = True
    alpha: float = 0.5  # only for surface = "minimizer"


class SpectralSpec(_Strict):
    k: int = Field(1, ge=1)
    directions: int = 720


class DeformSpec(_Strict):
    target: BodySpec
    steps: int = Field(10, ge=1)


class RegionSpec(_Strict):
    name: str
    kind: Literal["halfspace", "wedge", "sinusoid", "ball", "minimizer"]
    normal: tuple[float, float] = (1.0, 0.0)
    offset: float = 0.0
    half_angle: float = 0.7853981633974483
    amplitude: float = 0.2
    frequency: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.5
    alpha: float = 0.5


class BatterySpec(_Strict):
    cases: list[RegionSpec] = Field(min_length=1)
    directions: int = 1440
    t_grid: list[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4])


class SimonsSpec(_Strict):
    dims: list[int] = Field(default_factory=lambda: [1, 4])
    domains: list[Literal["ball", "hull"]] = Field(default_factory=lambda: ["ball"])
    bcs: list[Literal["boundary_fixed", "volume_constrained"]] = Field(
        default_factory=lambda: ["boundary_fixed", "volume_constrained"])
    N: int = 400
    full_grid_check: bool = True


class ExperimentConfig(_Strict):
    experiment: Kind
    name: Optional[str] = None
    seed: int = 0
    workers: int = Field(1, ge=1)
    out: Optional[str] = None
    body: Optional[BodySpec] = None
    density: DensitySpec = DensitySpec()
    grid: GridSpec = GridSpec()
    eps: EpsSpec = EpsSpec()
    opt: OptSpec = OptSpec()
    isoperimetric: Optional[IsoperimetricSpec] = None
    stability: Optional[StabilitySpec] = None
    spectral: Optional[SpectralSpec] = None
    deform: Optional[DeformSpec] = None
    battery: Optional[BatterySpec] = None
    simons: Optional[SimonsSpec] = None

    @model_validator(mode="after")
    def _tables_present(self):
        need = {"isoperimetric": "isoperimetric", "deform": "deform", "conjecture-battery": "battery"}
        key = need.get(self.experiment)
        if key and getattr(self, key) is None:
            raise ValueError(f"experiment {self.experiment!r} needs a [{key}] table")
        if self.experiment in ("spectral", "deform") and self.body is None:
            raise ValueError(f"experiment {self.experiment!r} needs a [body] table")
        if self.density.kind == "uniform" and self.body is None and self.experiment in (
                "isoperimetric", "conjecture-battery"):
            raise ValueError("a uniform density needs a [body] table")
        return self

    def digest(self) -> str:
        """sha256 of the canonical JSON form, excluding where output goes."""
        data = self.model_dump(mode="json", exclude={"out", "workers"})
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def parse_config(data: dict, seed: int | None = None) -> ExperimentConfig:
    if seed is not None:
        data = {**data, "seed": seed}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(str(err)) from err


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(Path(path), "rb") as fh:
            data = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(data, seed)
