"""Azimuth sectors, the packed voxel ordering key, and the dense sector template.

The serialization order inside one sector is: descending height layer first,
then ascending azimuth, then (as a determinism tie-break only) ascending
radial distance. The whole relation is packed into one unsigned 64-bit key so
that plain integer comparison reproduces it:

    bits 63..40   layer rank  (Z - 1 - z), so higher layers compare smaller
    bits 39..16   azimuth quantized to 24 bits (theta * 2^24 / 360, truncated)
    bits 15..0    radial distance in whole cell units, saturated at 0xffff

A final tie-break on the linear cell index is applied by the sort itself, not
inside the key. For a fixed grid the per-cell sector id and key are built once
offline into a dense template and queried at runtime.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConfigError, FormatError
from .voxels import VoxelGridSpec

THETA_BITS = 24
THETA_SCALE = (1 << THETA_BITS) / 360.0
THETA_QUANT_DEG = 360.0 / (1 << THETA_BITS)
RADIUS_MASK = 0xFFFF
LAYER_SHIFT = 40
THETA_SHIFT = 16

TEMPLATE_MAGIC = b"RAYT"
TEMPLATE_VERSION = 1

# build_template refuses grids above this cell count unless the caller raises
# the cap explicitly.
DEFAULT_CELL_CAP = 1 << 28


def n_sectors(delta_theta: float) -> int:
    """Number of sectors for an angular step that divides 360 degrees."""
    if not (0.0 < delta_theta <= 360.0):
        raise ConfigError(f"delta_theta must lie in (0, 360], got {delta_theta}")
    ratio = 360.0 / float(delta_theta)
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError(f"delta_theta must divide 360, got {delta_theta}")
    return int(round(ratio))


@dataclass(frozen=True)
class SectorConfig:
    """Sector geometry: angular step ``delta_theta`` in degrees (a divisor of
    360) and the BEV center ``(c_x, c_y)`` in fractional cell units."""

    delta_theta: float
    center: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "delta_theta", float(self.delta_theta))
        object.__setattr__(
            self, "center", (float(self.center[0]), float(self.center[1]))
        )
        n_sectors(self.delta_theta)

    @classmethod
    def for_spec(cls, delta_theta: float, spec: VoxelGridSpec) -> "SectorConfig":
        return cls(delta_theta=delta_theta, center=spec.center)

    @property
    def count(self) -> int:
        return n_sectors(self.delta_theta)


def azimuth_deg(r_x, r_y):
    """Azimuth of a relative BEV offset, in degrees within [0, 360).

    Computed as ``(atan2(r_y, r_x) * 180/pi + 360) mod 360``; the origin
    (0, 0) maps to 0 by convention. Accepts scalars or arrays.
    """
    theta = np.mod(np.degrees(np.arctan2(r_y, r_x)) + 360.0, 360.0)
    if np.ndim(theta) == 0:
        return float(theta)
    return theta


def sector_of(theta, delta_theta: float):
    """Sector index ``floor(theta / delta_theta)`` for theta in [0, 360).

    A boundary angle belongs to the higher sector (floor semantics), so
    theta = 60 with a 60-degree step lands in sector 1.
    """
    count = n_sectors(delta_theta)
    sec = np.minimum(np.floor_divide(theta, delta_theta).astype(np.int64), count - 1)
    if np.ndim(sec) == 0:
        return int(sec)
    return sec


def quantize_theta(theta):
    """Truncate an azimuth in [0, 360) to the key's 24-bit grid."""
    q = np.minimum(
        (np.asarray(theta, np.float64) * THETA_SCALE).astype(np.uint64),
        np.uint64((1 << THETA_BITS) - 1),
    )
    return q


def quantize_radius(radius):
    """Truncate a radial distance in cell units to 16 bits, saturating."""
    r = np.floor(np.asarray(radius, np.float64))
    return np.minimum(r, RADIUS_MASK).astype(np.uint64)


def order_key(z, theta, radius, dims: tuple[int, int, int]):
    """Pack (layer rank, quantized azimuth, quantized radius) into a u64 key.

    Unsigned comparison of keys orders voxels by descending z, then ascending
    azimuth, then ascending radius. Radii beyond the 16-bit range saturate at
    the maximum. Accepts scalars or arrays.
    """
    Z = int(dims[0])
    z = np.asarray(z, np.int64)
    if np.any(z < 0) or np.any(z >= Z):
        raise ConfigError(f"z must lie in [0, {Z})")
    rank = (Z - 1 - z).astype(np.uint64)
    key = (
        (rank << np.uint64(LAYER_SHIFT))
        | (quantize_theta(theta) << np.uint64(THETA_SHIFT))
        | quantize_radius(radius)
    )
    if np.ndim(key) == 0:
        return int(key)
    return key


@dataclass(frozen=True)
class SectorTemplate:
    """Dense per-cell (sector id, ordering key) arrays for one grid.

    Both arrays are flat, row-major over ``(z, y, x)``, length Z*Y*X.
    """

    dims: tuple[int, int, int]
    config: SectorConfig
    sector_of_cell: np.ndarray  # u16
    key_of_cell: np.ndarray  # u64

    def __post_init__(self):
        n = self.dims[0] * self.dims[1] * self.dims[2]
        sec = np.ascontiguousarray(self.sector_of_cell, dtype=np.uint16)
        key = np.ascontiguousarray(self.key_of_cell, dtype=np.uint64)
        if sec.shape != (n,) or key.shape != (n,):
            raise ConfigError(
                f"template arrays must be flat with {n} entries, got "
                f"{sec.shape} and {key.shape}"
            )
        sec.flags.writeable = False
        key.flags.writeable = False
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "sector_of_cell", sec)
        object.__setattr__(self, "key_of_cell", key)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SectorTemplate)
            and self.dims == other.dims
            and self.config == other.config
            and np.array_equal(self.sector_of_cell, other.sector_of_cell)
            and np.array_equal(self.key_of_cell, other.key_of_cell)
        )


def build_template(
    spec: VoxelGridSpec,
    config: SectorConfig,
    max_cells: int = DEFAULT_CELL_CAP,
) -> SectorTemplate:
    """Populate the dense sector template for every cell of a grid.

    Per cell: azimuth from the BEV offset to the configured center, sector id
    by the angular step, and the packed ordering key. The sector id and
    azimuth depend only on (y, x); the z layer enters the key's top bits.
    """
    Z, Y, X = spec.dims
    if spec.n_cells > max_cells:
        raise CapacityError(
            f"grid has {spec.n_cells} cells, above the cap of {max_cells}"
        )
    c_x, c_y = config.center
    ys, xs = np.meshgrid(np.arange(Y), np.arange(X), indexing="ij")
    r_x = xs - c_x
    r_y = ys - c_y
    theta = azimuth_deg(r_x, r_y)
    radius = np.hypot(r_x, r_y)
    sector_bev = sector_of(theta, config.delta_theta).astype(np.uint16)
    qtheta = quantize_theta(theta)
    qradius = quantize_radius(radius)
    bev_key = (qtheta << np.uint64(THETA_SHIFT)) | qradius

    ranks = np.arange(Z - 1, -1, -1, dtype=np.uint64)
    keys = (ranks[:, None, None] << np.uint64(LAYER_SHIFT)) | bev_key[None, :, :]
    sectors = np.broadcast_to(sector_bev[None, :, :], (Z, Y, X))
    return SectorTemplate(
        dims=spec.dims,
        config=config,
        sector_of_cell=np.ascontiguousarray(sectors).reshape(-1),
        key_of_cell=np.ascontiguousarray(keys).reshape(-1),
    )


# ---------------------------------------------------------------------------
# Template file format (little-endian):
#   magic 'RAYT' | version u32 | Z u32 | Y u32 | X u32
#   | delta_theta f64 | c_x f64 | c_y f64
#   | Z*Y*X u16 sector ids | Z*Y*X u64 keys | crc32 u32 of the two arrays
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIddd")


def write_template(template: SectorTemplate, path) -> None:
    Z, Y, X = template.dims
    cfg = template.config
    header = _HEADER.pack(
        TEMPLATE_MAGIC, TEMPLATE_VERSION, Z, Y, X,
        cfg.delta_theta, cfg.center[0], cfg.center[1],
    )
    sec_bytes = template.sector_of_cell.astype("<u2").tobytes()
    key_bytes = template.key_of_cell.astype("<u8").tobytes()
    crc = zlib.crc32(sec_bytes)
    crc = zlib.crc32(key_bytes, crc)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(sec_bytes)
        fh.write(key_bytes)
        fh.write(struct.pack("<I", crc))


def read_template(path) -> SectorTemplate:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise FormatError(f"{path}: file too short for a template header")
    magic, version, Z, Y, X, dtheta, c_x, c_y = _HEADER.unpack_from(raw, 0)
    if magic != TEMPLATE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {TEMPLATE_MAGIC!r}")
    if version != TEMPLATE_VERSION:
        raise FormatError(
            f"{path}: unsupported version {version}, expected {TEMPLATE_VERSION}"
        )
    n = Z * Y * X
    expected = _HEADER.size + n * 2 + n * 8 + 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}"
        )
    off = _HEADER.size
    sec_bytes = raw[off : off + n * 2]
    key_bytes = raw[off + n * 2 : off + n * 10]
    (crc_stored,) = struct.unpack_from("<I", raw, off + n * 10)
    crc = zlib.crc32(key_bytes, zlib.crc32(sec_bytes))
    if crc != crc_stored:
        raise FormatError(
            f"{path}: checksum mismatch, stored {crc_stored:#x}, computed {crc:#x}"
        )
    sectors = np.frombuffer(sec_bytes, dtype="<u2").astype(np.uint16)
    keys = np.frombuffer(key_bytes, dtype="<u8").astype(np.uint64)
    return SectorTemplate(
        dims=(Z, Y, X),
        config=SectorConfig(delta_theta=dtheta, center=(c_x, c_y)),
        sector_of_cell=sectors,
        key_of_cell=keys,
    )
