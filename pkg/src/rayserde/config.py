"""Run configuration: defaults, TOML config file, CLI overrides (in that
precedence order, lowest to highest)."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .sectors import SectorConfig
from .serialize import AxisSort, Hilbert, Morton, RayAligned, SerializationStrategy, min_curve_order
from .simulate import SensorModel
from .voxels import VoxelGridSpec

STRATEGY_NAMES = ("ray", "hilbert", "morton", "axis")


@dataclass(frozen=True)
class RunConfig:
    # grid
    dims: tuple[int, int, int] = (11, 256, 256)
    voxel_size: tuple[float, float, float] = (0.8, 0.4, 0.4)
    origin: tuple[float, float, float] = (-51.2, -51.2, -2.0)
    center: tuple[float, float] | None = None
    reduce: str = "mean"
    # sector
    delta_theta: float = 60.0
    # strategy
    strategy: str = "ray"
    curve_order: int | None = None
    axis_priority: tuple[str, str, str] = ("z", "y", "x")
    # metrics
    k: int = 360
    far_field_min_range_m: float = 40.0
    n_scenes: int = 20
    max_refs: int = 50
    # block
    channel_dim: int = 16
    state_dim: int = 16
    aggregation_radius: int = 1
    max_len: int = 1 << 17
    sinusoidal_pos: bool = False
    # sensor
    beam_count: int = 32
    vertical_fov: tuple[float, float] = (-30.0, 10.0)
    azimuth_resolution: float = 0.2
    max_range: float = 60.0
    sensor_origin: tuple[float, float, float] = (0.0, 0.0, 1.8)
    range_noise_sigma: float = 0.0
    # run
    seed: int = 0
    workers: int = 1
    precision: str = "f64"
    out_dir: str = "out"
    scene_path: str | None = None
    cloud_path: str | None = None
    template_path: str | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGY_NAMES:
            raise ConfigError(
                f"strategy: must be one of {STRATEGY_NAMES}, got {self.strategy!r}"
            )
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision: must be f32 or f64, got {self.precision!r}")
        if self.workers < 1:
            raise ConfigError(f"workers: must be >= 1, got {self.workers}")
        if self.k < 0:
            raise ConfigError(f"K: must be >= 0, got {self.k}")
        # delegated validations name their field via the raised message
        self.grid_spec()
        self.sector_config()
        for name in ("scene_path", "cloud_path", "template_path"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{name}: path does not exist: {value}")

    def grid_spec(self) -> VoxelGridSpec:
        return VoxelGridSpec(
            voxel_size=self.voxel_size,
            dims=self.dims,
            origin=self.origin,
            center=self.center,
        )

    def sector_config(self) -> SectorConfig:
        return SectorConfig.for_spec(self.delta_theta, self.grid_spec())

    def sensor_model(self) -> SensorModel:
        return SensorModel(
            beam_count=self.beam_count,
            vertical_fov_deg=self.vertical_fov,
            azimuth_resolution_deg=self.azimuth_resolution,
            max_range_m=self.max_range,
            origin=self.sensor_origin,
            range_noise_sigma=self.range_noise_sigma,
        )

    def resolved_curve_order(self) -> int:
        return self.curve_order if self.curve_order else min_curve_order(self.dims)

    def scan_dtype(self):
        import numpy as np

        return np.float32 if self.precision == "f32" else np.float64

    def strategy_for(self, name: str, template) -> SerializationStrategy:
        if name == "ray":
            return RayAligned(template)
        if name == "hilbert":
            return Hilbert(self.resolved_curve_order())
        if name == "morton":
            return Morton(self.resolved_curve_order())
        if name == "axis":
            return AxisSort(self.axis_priority)
        raise ConfigError(f"strategy: unknown name {name!r}")

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


# TOML section -> config field mapping; flat keys inside each section.
_SECTIONS = {
    "grid": ("dims", "voxel_size", "origin", "center", "reduce"),
    "sector": ("delta_theta",),
    "strategy": ("strategy", "curve_order", "axis_priority"),
    "metrics": ("k", "far_field_min_range_m", "n_scenes", "max_refs"),
    "block": (
        "channel_dim",
        "state_dim",
        "aggregation_radius",
        "max_len",
        "sinusoidal_pos",
    ),
    "sensor": (
        "beam_count",
        "vertical_fov",
        "azimuth_resolution",
        "max_range",
        "sensor_origin",
        "range_noise_sigma",
    ),
    "run": (
        "seed",
        "workers",
        "precision",
        "out_dir",
        "scene_path",
        "cloud_path",
        "template_path",
    ),
}

_TUPLE_FIELDS = {
    "dims": int,
    "voxel_size": float,
    "origin": float,
    "center": float,
    "vertical_fov": float,
    "sensor_origin": float,
    "axis_priority": str,
}


def _coerce(name: str, value):
    if name in _TUPLE_FIELDS and value is not None:
        conv = _TUPLE_FIELDS[name]
        if isinstance(value, str):
            value = value.split(",")
        try:
            return tuple(conv(v) for v in value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: cannot parse {value!r}: {exc}") from exc
    return value


def load_config_file(path) -> dict:
    """Flat field -> value dict from a sectioned TOML file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc
    overrides = {}
    for section, keys in _SECTIONS.items():
        body = data.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"config file {path}: [{section}] must be a table")
        for key, value in body.items():
            if key not in keys:
                raise ConfigError(
                    f"config file {path}: unknown key {key!r} in [{section}]"
                )
            overrides[key] = _coerce(key, value)
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(
            f"config file {path}: unknown sections {sorted(unknown)}"
        )
    return overrides


def build_config(file_path=None, cli_overrides: dict | None = None) -> RunConfig:
    """Defaults, then config file values, then CLI values."""
    values: dict = {}
    if file_path is not None:
        values.update(load_config_file(file_path))
    for key, value in (cli_overrides or {}).items():
        if value is not None:
            values[key] = _coerce(key, value)
    return RunConfig(**values)
