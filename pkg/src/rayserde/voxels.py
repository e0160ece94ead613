"""Point-cloud and sparse-voxel data model, voxelization, and cloud file I/O.

Coordinate conventions used everywhere in this package:

* world points are ``(x, y, z)`` in meters, intensity is unitless in ``[0, 1]``;
* voxel cell indices are ``(z, y, x)`` row-major, matching the grid shape
  notation ``(Z, Y, X)``;
* a grid's ``origin`` is the world coordinate of the *corner* of cell
  ``(0, 0, 0)``, and ``center`` is the ego position in fractional cell units
  on the BEV plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BoundsError, ConfigError, FormatError

REDUCEMODES = ("mean", "max", "count-augmented-mean")


def _freeze(arr: np.ndarray) -> np.ndarray:
    """Detach from caller-owned buffers and make read-only."""
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PointCloud:
    """A LiDAR return set: ``points`` is an (N, 4) float64 array of
    ``x, y, z, intensity`` rows; ``scene_id`` identifies the scene (it plays
    the role of the batch index downstream)."""

    points: np.ndarray
    scene_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ConfigError(f"points must be (N, 4), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ConfigError("point cloud contains non-finite values")
        inten = pts[:, 3]
        if pts.shape[0] and (inten.min() < 0.0 or inten.max() > 1.0):
            raise ConfigError("intensity must lie within [0, 1]")
        object.__setattr__(self, "points", _freeze(pts))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class VoxelGridSpec:
    """Fixed voxel grid: ``voxel_size`` is ``(dz, dy, dx)`` meters, ``dims``
    is ``(Z, Y, X)`` cell counts, ``origin`` the world ``(x0, y0, z0)`` of the
    corner of cell (0, 0, 0), and ``center`` the ego ``(c_x, c_y)`` in
    fractional cell units (defaults to the grid midpoint)."""

    voxel_size: tuple[float, float, float]
    dims: tuple[int, int, int]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    center: tuple[float, float] | None = None

    def __post_init__(self):
        size = tuple(float(s) for s in self.voxel_size)
        dims = tuple(int(d) for d in self.dims)
        origin = tuple(float(o) for o in self.origin)
        if len(size) != 3 or len(dims) != 3 or len(origin) != 3:
            raise ConfigError("voxel_size, dims and origin must have 3 entries")
        if any(s <= 0 for s in size):
            raise ConfigError(f"voxel_size must be positive, got {size}")
        if any(d < 1 for d in dims):
            raise ConfigError(f"dims must all be >= 1, got {dims}")
        center = self.center
        if center is None:
            center = ((dims[2] - 1) / 2.0, (dims[1] - 1) / 2.0)
        center = (float(center[0]), float(center[1]))
        if not (0.0 <= center[0] < dims[2] and 0.0 <= center[1] < dims[1]):
            raise ConfigError(
                f"center {center} must lie within [0, {dims[2]}) x [0, {dims[1]})"
            )
        object.__setattr__(self, "voxel_size", size)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "center", center)

    @property
    def n_cells(self) -> int:
        z, y, x = self.dims
        return z * y * x

    def linear_index(self, coords: np.ndarray) -> np.ndarray:
        """Row-major linear cell index of (z, y, x) coordinate rows."""
        coords = np.asarray(coords, dtype=np.int64)
        _, Y, X = self.dims
        return (coords[..., 0] * Y + coords[..., 1]) * X + coords[..., 2]


@dataclass(frozen=True)
class SparseVoxelSet:
    """Active voxels of one scene: ``coords`` (N, 3) int64 ``(z, y, x)`` cell
    indices (unique, in range), ``features`` (N, C) per-voxel vectors,
    ``point_counts`` (N,) number of merged points per voxel."""

    coords: np.ndarray
    features: np.ndarray
    point_counts: np.ndarray
    spec: VoxelGridSpec
    scene_id: str = ""

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        feats = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        counts = np.asarray(self.point_counts, dtype=np.int64).reshape(-1)
        if feats.shape[0] != coords.shape[0] or counts.shape[0] != coords.shape[0]:
            raise ConfigError(
                "coords, features and point_counts must have equal length "
                f"({coords.shape[0]}, {feats.shape[0]}, {counts.shape[0]})"
            )
        if coords.shape[0]:
            if coords.min() < 0 or (coords >= np.array(self.spec.dims)).any():
                raise BoundsError("voxel coordinate outside grid dims")
            lin = self.spec.linear_index(coords)
            if np.unique(lin).size != lin.size:
                raise ConfigError("duplicate voxel coordinates")
            if (counts < 1).any():
                raise ConfigError("point_counts must be >= 1")
        object.__setattr__(self, "coords", _freeze(coords))
        object.__setattr__(self, "features", _freeze(feats))
        object.__setattr__(self, "point_counts", _freeze(counts))

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def n_channels(self) -> int:
        return self.features.shape[1]

    def linear_indices(self) -> np.ndarray:
        return self.spec.linear_index(self.coords)

    def with_features(self, features: np.ndarray) -> "SparseVoxelSet":
        """Same voxels with a replacement feature matrix."""
        feats = np.asarray(features, dtype=np.float64)
        if feats.shape[0] != len(self):
            raise ConfigError("replacement features must match voxel count")
        return SparseVoxelSet(
            coords=self.coords,
            features=feats,
            point_counts=self.point_counts,
            spec=self.spec,
            scene_id=self.scene_id,
        )


def voxelize(
    cloud: PointCloud, spec: VoxelGridSpec, reduce: str = "mean"
) -> tuple[SparseVoxelSet, int]:
    """Assign points to grid cells and merge duplicates.

    Each point maps to ``floor((p - origin) / voxel_size)`` per axis; points
    outside the grid are silently dropped. Per-cell features are the point
    attribute rows ``(x, y, z, intensity)`` merged by ``reduce``:

    * ``mean`` — arithmetic mean (double-precision accumulation),
    * ``max`` — elementwise maximum,
    * ``count-augmented-mean`` — mean with the point count appended as an
      extra channel.

    Returns the sparse voxel set and the number of dropped points.
    """
    if reduce not in REDUCEMODES:
        raise ConfigError(f"reduce must be one of {REDUCEMODES}, got {reduce!r}")
    pts = cloud.points
    dz, dy, dx = spec.voxel_size
    x0, y0, z0 = spec.origin
    cx = np.floor((pts[:, 0] - x0) / dx).astype(np.int64)
    cy = np.floor((pts[:, 1] - y0) / dy).astype(np.int64)
    cz = np.floor((pts[:, 2] - z0) / dz).astype(np.int64)
    Z, Y, X = spec.dims
    keep = (
        (cx >= 0) & (cx < X) & (cy >= 0) & (cy < Y) & (cz >= 0) & (cz < Z)
    )
    dropped = int((~keep).sum())
    coords = np.stack([cz[keep], cy[keep], cx[keep]], axis=1)
    attrs = pts[keep]

    if coords.shape[0] == 0:
        n_ch = 5 if reduce == "count-augmented-mean" else 4
        empty = SparseVoxelSet(
            coords=np.empty((0, 3), np.int64),
            features=np.empty((0, n_ch), np.float64),
            point_counts=np.empty((0,), np.int64),
            spec=spec,
            scene_id=cloud.scene_id,
        )
        return empty, dropped

    lin = spec.linear_index(coords)
    uniq, inverse, counts = np.unique(lin, return_inverse=True, return_counts=True)
    n_vox = uniq.size
    if reduce == "max":
        feats = np.full((n_vox, 4), -np.inf)
        np.maximum.at(feats, inverse, attrs)
    else:
        feats = np.zeros((n_vox, 4))
        np.add.at(feats, inverse, attrs)
        feats /= counts[:, None]
        if reduce == "count-augmented-mean":
            feats = np.concatenate([feats, counts[:, None].astype(np.float64)], axis=1)

    out_coords = np.stack(
        [uniq // (Y * X), (uniq // X) % Y, uniq % X], axis=1
    )
    vset = SparseVoxelSet(
        coords=out_coords,
        features=feats,
        point_counts=counts,
        spec=spec,
        scene_id=cloud.scene_id,
    )
    return vset, dropped


def voxel_center_world(coord, spec: VoxelGridSpec) -> np.ndarray:
    """World-space ``(x, y, z)`` of cell centers.

    ``coord`` is a single ``(z, y, x)`` triple or an (N, 3) array of them;
    the result mirrors the input shape. Center = origin + (index + 0.5) * size.
    """
    c = np.asarray(coord, dtype=np.int64)
    single = c.ndim == 1
    c = c.reshape(-1, 3)
    if c.shape[0]:
        if c.min() < 0 or (c >= np.array(spec.dims)).any():
            raise BoundsError(f"cell coordinate outside dims {spec.dims}")
    dz, dy, dx = spec.voxel_size
    x0, y0, z0 = spec.origin
    out = np.empty((c.shape[0], 3), np.float64)
    out[:, 0] = x0 + (c[:, 2] + 0.5) * dx
    out[:, 1] = y0 + (c[:, 1] + 0.5) * dy
    out[:, 2] = z0 + (c[:, 0] + 0.5) * dz
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Cloud file formats: CSV with an x,y,z,intensity header, and raw little-endian
# float32 quadruplets with no header.
# ---------------------------------------------------------------------------

CSV_HEADER = "x,y,z,intensity"


def write_points_csv(cloud: PointCloud, path) -> None:
    np.savetxt(path, cloud.points, delimiter=",", header=CSV_HEADER, comments="")


def read_points_csv(path, scene_id: str = "") -> PointCloud:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != CSV_HEADER:
            raise FormatError(
                f"{path}: expected CSV header '{CSV_HEADER}', got '{header}'"
            )
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        data = np.empty((0, 4))
    if data.shape[1] != 4:
        raise FormatError(f"{path}: expected 4 CSV columns, got {data.shape[1]}")
    return PointCloud(points=data, scene_id=scene_id or path.stem)


def write_points_bin(cloud: PointCloud, path) -> None:
    Path(path).write_bytes(cloud.points.astype("<f4").tobytes())


def read_points_bin(path, scene_id: str = "") -> PointCloud:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % 16 != 0:
        raise FormatError(
            f"{path}: binary cloud length {len(raw)} is not a multiple of 16 bytes"
        )
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    return PointCloud(points=pts, scene_id=scene_id or path.stem)
