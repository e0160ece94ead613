"""Spatial-to-Sequence reordering of active voxels, its exact inverse, and
baseline orderings (Hilbert, Morton, axis sort) for comparison.

The ray-aligned strategy looks each active voxel up in a dense sector
template, groups voxels by sector, and sorts every group by the precomputed
64-bit key (final tie-break: linear cell index). Baseline strategies order
the whole active set as a single pseudo-sector 0 under their own key.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import curves
from .errors import ConfigError, ContractError
from .sectors import SectorTemplate
from .voxels import SparseVoxelSet

AXIS_INDEX = {"z": 0, "y": 1, "x": 2}
_AXIS_BITS = 21  # per-coordinate width inside packed baseline keys


@dataclass(frozen=True)
class RayAligned:
    """Sector-wise ordering via a precomputed template."""

    template: SectorTemplate


@dataclass(frozen=True)
class Hilbert:
    """Single-sequence Hilbert-curve ordering; 2^order must cover the grid."""

    order: int


@dataclass(frozen=True)
class Morton:
    """Single-sequence Z-order (bit interleave) ordering."""

    order: int


@dataclass(frozen=True)
class AxisSort:
    """Single-sequence lexicographic coordinate sort, highest priority first."""

    priority: tuple[str, str, str] = ("z", "y", "x")

    def __post_init__(self):
        pr = tuple(self.priority)
        if sorted(pr) != ["x", "y", "z"]:
            raise ConfigError(f"priority must be a permutation of z,y,x, got {pr}")
        object.__setattr__(self, "priority", pr)


SerializationStrategy = Union[RayAligned, Hilbert, Morton, AxisSort]


def min_curve_order(dims: tuple[int, int, int]) -> int:
    """Smallest curve order whose cube covers the grid."""
    order = 1
    while (1 << order) < max(dims):
        order += 1
    return order


@dataclass(frozen=True)
class SectorSequence:
    """One ordered per-sector sequence: source voxel rows, their features in
    sequence order, and the sort keys that produced the order."""

    sector: int
    rows: np.ndarray
    features: np.ndarray
    keys: np.ndarray

    def __len__(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class SectorSequences:
    """Sector-wise ordered sequences of one scene; empty sectors are absent
    and entries are listed by ascending sector id."""

    scene_id: str
    entries: tuple[SectorSequence, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def total(self) -> int:
        return sum(len(e) for e in self.entries)

    @property
    def sector_ids(self) -> tuple[int, ...]:
        return tuple(e.sector for e in self.entries)


@dataclass(frozen=True)
class InverseIndex:
    """Exact permutation between voxel rows and sequence positions.

    ``order[p]`` is the voxel row at flat sequence position ``p`` (entries
    concatenated by ascending sector); ``starts`` bounds each entry within
    ``order``; ``position_of_row`` is the inverse permutation.
    """

    order: np.ndarray
    starts: np.ndarray
    sector_ids: np.ndarray
    position_of_row: np.ndarray

    def locate(self, row: int) -> tuple[int, int]:
        """Map a voxel row to its (sector id, offset within the sector)."""
        pos = int(self.position_of_row[row])
        entry = int(np.searchsorted(self.starts, pos, side="right") - 1)
        return int(self.sector_ids[entry]), pos - int(self.starts[entry])


def _strategy_keys(
    voxels: SparseVoxelSet, strategy: SerializationStrategy
) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel (sector id, sort key) arrays for a strategy."""
    coords = voxels.coords
    dims = voxels.spec.dims
    n = len(voxels)
    if isinstance(strategy, RayAligned):
        template = strategy.template
        if tuple(template.dims) != tuple(dims):
            raise ConfigError(
                f"template dims {template.dims} do not match grid dims {dims}"
            )
        lin = voxels.linear_indices()
        return template.sector_of_cell[lin].astype(np.int64), template.key_of_cell[lin]
    if isinstance(strategy, (Hilbert, Morton)):
        if (1 << strategy.order) < max(dims):
            raise ConfigError(
                f"curve order {strategy.order} too small for dims {dims}; "
                f"need 2^order >= {max(dims)}"
            )
        encode = curves.hilbert_key if isinstance(strategy, Hilbert) else curves.morton_key
        keys = encode(coords, strategy.order) if n else np.empty(0, np.uint64)
        return np.zeros(n, np.int64), np.asarray(keys, np.uint64).reshape(-1)
    if isinstance(strategy, AxisSort):
        if max(dims) >= 1 << _AXIS_BITS:
            raise ConfigError(f"dims {dims} exceed axis-sort key range")
        key = np.zeros(n, np.uint64)
        for name in strategy.priority:
            key = (key << np.uint64(_AXIS_BITS)) | coords[:, AXIS_INDEX[name]].astype(
                np.uint64
            )
        return np.zeros(n, np.int64), key
    raise ConfigError(f"unknown serialization strategy {strategy!r}")


def _grouped_order(
    sec: np.ndarray, key: np.ndarray, lin: np.ndarray, workers: int
) -> np.ndarray:
    """Permutation sorting rows by (sector, key, linear index).

    With multiple workers each sector group is sorted independently; the
    result is identical to the single lexsort by construction.
    """
    if workers <= 1 or sec.size == 0:
        return np.lexsort((lin, key, sec))
    by_sector = np.argsort(sec, kind="stable")
    sec_sorted = sec[by_sector]
    cuts = np.flatnonzero(np.diff(sec_sorted)) + 1
    starts = np.concatenate(([0], cuts, [sec.size]))
    groups = [by_sector[s:e] for s, e in zip(starts[:-1], starts[1:])]

    def sort_group(g: np.ndarray) -> np.ndarray:
        return g[np.lexsort((lin[g], key[g]))]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(sort_group, groups))
    return np.concatenate(parts)


def spatial_to_sequence(
    voxels: SparseVoxelSet,
    strategy: SerializationStrategy,
    workers: int = 1,
) -> tuple[SectorSequences, InverseIndex]:
    """Reorder active voxels into sector-wise 1D sequences.

    Returns the ordered sequences plus the inverse index needed to scatter
    per-position results back to their source voxels. Deterministic for any
    worker count.
    """
    sec, key = _strategy_keys(voxels, strategy)
    lin = voxels.linear_indices()
    order = _grouped_order(sec, key, lin, workers).astype(np.int64)

    sec_sorted = sec[order]
    cuts = np.flatnonzero(np.diff(sec_sorted)) + 1
    starts = np.concatenate(([0], cuts, [sec.size])).astype(np.int64)
    entries = []
    for s, e in zip(starts[:-1], starts[1:]):
        if e == s:
            continue  # empty voxel set yields a single empty span
        rows = order[s:e]
        entries.append(
            SectorSequence(
                sector=int(sec_sorted[s]),
                rows=rows,
                features=voxels.features[rows],
                keys=key[rows],
            )
        )
    if len(voxels) == 0:
        starts = np.zeros(1, np.int64)
        entries = []

    position_of_row = np.empty(len(voxels), np.int64)
    position_of_row[order] = np.arange(len(voxels), dtype=np.int64)
    inv = InverseIndex(
        order=order,
        starts=starts,
        sector_ids=np.array([e.sector for e in entries], np.int64),
        position_of_row=position_of_row,
    )
    return SectorSequences(scene_id=voxels.scene_id, entries=tuple(entries)), inv


def sequence_to_spatial(
    enhanced: SectorSequences, inv: InverseIndex, target: SparseVoxelSet
) -> SparseVoxelSet:
    """Scatter per-position features back to their source voxels.

    ``enhanced`` must structurally match ``inv`` (same sectors, same lengths,
    same row permutation); the result is ``target`` with features replaced,
    coordinates untouched.
    """
    if len(enhanced.entries) != inv.sector_ids.size:
        raise ContractError(
            f"{len(enhanced.entries)} sequence entries vs "
            f"{inv.sector_ids.size} in the inverse index"
        )
    total = enhanced.total
    if total != len(target) or inv.order.size != len(target):
        raise ContractError(
            f"sequence positions ({total}) must cover all {len(target)} voxels"
        )
    for i, entry in enumerate(enhanced.entries):
        s, e = int(inv.starts[i]), int(inv.starts[i + 1])
        if entry.sector != int(inv.sector_ids[i]) or len(entry) != e - s:
            raise ContractError(
                f"entry {i} (sector {entry.sector}, len {len(entry)}) does not "
                f"match inverse index span (sector {int(inv.sector_ids[i])}, "
                f"len {e - s})"
            )
        if not np.array_equal(entry.rows, inv.order[s:e]):
            raise ContractError(f"entry {i} row order diverges from inverse index")
    if total == 0:
        return target.with_features(np.empty((0, target.n_channels)))
    concat = np.concatenate([e.features for e in enhanced.entries], axis=0)
    if concat.shape[1] != target.n_channels:
        raise ContractError(
            f"feature channels {concat.shape[1]} vs target {target.n_channels}"
        )
    out = np.empty_like(concat)
    out[inv.order] = concat
    return target.with_features(out)


def replace_sequence_features(
    seqs: SectorSequences, features_per_entry: list[np.ndarray]
) -> SectorSequences:
    """New SectorSequences with per-entry feature matrices swapped out."""
    if len(features_per_entry) != len(seqs.entries):
        raise ContractError("one feature matrix per sector entry required")
    new_entries = []
    for entry, feats in zip(seqs.entries, features_per_entry):
        feats = np.asarray(feats, np.float64)
        if feats.shape[0] != len(entry):
            raise ContractError(
                f"sector {entry.sector}: {feats.shape[0]} feature rows for "
                f"{len(entry)} positions"
            )
        new_entries.append(
            SectorSequence(
                sector=entry.sector, rows=entry.rows, features=feats, keys=entry.keys
            )
        )
    return SectorSequences(scene_id=seqs.scene_id, entries=tuple(new_entries))


def dump_sequences_jsonl(seqs: SectorSequences, path) -> None:
    """Write one JSON record per sector: scene, sector id, count, rows, keys."""
    with open(path, "w") as fh:
        for entry in seqs.entries:
            record = {
                "scene_id": seqs.scene_id,
                "sector": entry.sector,
                "count": len(entry),
                "voxel_rows": entry.rows.tolist(),
                "keys": [int(k) for k in entry.keys],
            }
            fh.write(json.dumps(record) + "\n")
