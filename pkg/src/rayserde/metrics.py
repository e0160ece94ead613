"""Serialization-quality metrics: how coherent is the sequence context
around a reference voxel under a given ordering strategy.

For each reference voxel the context window is the K sequence positions
nearest to it inside its own (pseudo-)sector sequence, split half on each
side and clipped at the sequence boundaries; the reference itself is not a
member. Windows never cross sectors. Reported per window: mean spatial
dispersion in meters, circular azimuth spread in degrees, and the fraction
of members sharing the reference's sector.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import SequenceLookupError
from .sectors import SectorConfig, azimuth_deg, sector_of
from .serialize import InverseIndex, SectorSequences, SerializationStrategy, spatial_to_sequence
from .voxels import SparseVoxelSet, voxel_center_world

SCHEMA_VERSION = 1


def _locate(seqs: SectorSequences, ref_row: int) -> tuple[int, int]:
    for entry_idx, entry in enumerate(seqs.entries):
        hits = np.flatnonzero(entry.rows == ref_row)
        if hits.size:
            return entry_idx, int(hits[0])
    raise SequenceLookupError(f"voxel row {ref_row} is absent from the sequences")


def _window_rows(entry_rows: np.ndarray, offset: int, k: int) -> np.ndarray:
    left = k // 2
    right = k - left
    lo = max(0, offset - left)
    hi = min(entry_rows.size, offset + right + 1)
    picks = np.r_[lo:offset, offset + 1 : hi]
    return entry_rows[picks]


def context_window(
    seqs: SectorSequences, ref_row: int, k: int, inv: InverseIndex | None = None
) -> np.ndarray:
    """Voxel rows of the up-to-K positions around a reference voxel.

    K//2 positions are taken on each side within the reference's sector
    sequence, clipped at the sequence ends; the window never leaves the
    sector and never contains the reference itself.
    """
    if k < 0:
        raise SequenceLookupError(f"window size must be >= 0, got {k}")
    if inv is not None:
        if ref_row < 0 or ref_row >= inv.position_of_row.size:
            raise SequenceLookupError(f"voxel row {ref_row} out of range")
        pos = int(inv.position_of_row[ref_row])
        entry_idx = int(np.searchsorted(inv.starts, pos, side="right") - 1)
        offset = pos - int(inv.starts[entry_idx])
    else:
        entry_idx, offset = _locate(seqs, ref_row)
    if k == 0:
        return np.empty(0, np.int64)
    return _window_rows(seqs.entries[entry_idx].rows, offset, k)


def dispersion(
    window_rows: np.ndarray, voxels: SparseVoxelSet, ref_row: int
) -> float | None:
    """Mean world-space distance (meters) from window members to the
    reference voxel center; None for an empty window."""
    rows = np.asarray(window_rows, np.int64)
    if rows.size == 0:
        return None
    centers = voxel_center_world(voxels.coords[rows], voxels.spec)
    ref = voxel_center_world(voxels.coords[ref_row], voxels.spec)
    return float(np.linalg.norm(centers - ref[None, :], axis=1).mean())


def angular_spread(window_rows: np.ndarray, voxels: SparseVoxelSet) -> float | None:
    """Circular range of window-member azimuths in degrees.

    Computed as 360 minus the largest gap between consecutive sorted
    azimuths on the circle; a single member spreads 0. None when empty.
    """
    rows = np.asarray(window_rows, np.int64)
    if rows.size == 0:
        return None
    c_x, c_y = voxels.spec.center
    coords = voxels.coords[rows]
    theta = np.atleast_1d(
        azimuth_deg(coords[:, 2] - c_x, coords[:, 1] - c_y)
    )
    if theta.size == 1:
        return 0.0
    s = np.sort(theta)
    gaps = np.diff(s)
    wrap = 360.0 - (s[-1] - s[0])
    return float(360.0 - max(gaps.max(), wrap))


def same_sector_fraction(
    window_rows: np.ndarray,
    voxels: SparseVoxelSet,
    ref_row: int,
    config: SectorConfig,
) -> float | None:
    """Fraction of window members assigned to the reference's sector."""
    rows = np.asarray(window_rows, np.int64)
    if rows.size == 0:
        return None
    c_x, c_y = config.center
    coords = voxels.coords
    theta_ref = azimuth_deg(coords[ref_row, 2] - c_x, coords[ref_row, 1] - c_y)
    sec_ref = sector_of(theta_ref, config.delta_theta)
    theta = azimuth_deg(coords[rows, 2] - c_x, coords[rows, 1] - c_y)
    sec = sector_of(theta, config.delta_theta)
    return float(np.mean(sec == sec_ref))


def bev_range_m(voxels: SparseVoxelSet, rows=None) -> np.ndarray:
    """BEV distance in meters from the ego center to voxel centers."""
    spec = voxels.spec
    coords = voxels.coords if rows is None else voxels.coords[np.asarray(rows)]
    centers = voxel_center_world(coords, spec)
    dz, dy, dx = spec.voxel_size
    x0, y0, _ = spec.origin
    ego_x = x0 + (spec.center[0] + 0.5) * dx
    ego_y = y0 + (spec.center[1] + 0.5) * dy
    return np.hypot(centers[:, 0] - ego_x, centers[:, 1] - ego_y)


def far_field_rows(voxels: SparseVoxelSet, min_range_m: float = 40.0) -> np.ndarray:
    return np.flatnonzero(bev_range_m(voxels) > min_range_m)


@dataclass(frozen=True)
class RefWindowMetrics:
    ref_row: int
    range_m: float
    k: int
    dispersion_m: float | None
    angular_spread_deg: float | None
    same_sector_frac: float | None


@dataclass(frozen=True)
class CoherenceReport:
    strategy: str
    scene_id: str
    k: int
    refs: tuple[RefWindowMetrics, ...]
    aggregates: dict
    meta: dict


def _aggregate(values: list[float | None]) -> dict:
    present = np.array([v for v in values if v is not None], np.float64)
    if present.size == 0:
        return {"mean": None, "median": None, "count": 0}
    return {
        "mean": float(present.mean()),
        "median": float(np.median(present)),
        "count": int(present.size),
    }


def coherence_report(
    voxels: SparseVoxelSet,
    strategy_name: str,
    strategy: SerializationStrategy,
    config: SectorConfig,
    ref_rows: np.ndarray,
    k: int = 360,
    workers: int = 1,
) -> CoherenceReport:
    """Window metrics for one scene under one serialization strategy."""
    seqs, inv = spatial_to_sequence(voxels, strategy, workers=workers)
    ranges = bev_range_m(voxels, ref_rows) if len(ref_rows) else np.empty(0)
    refs = []
    for ref_row, rng_m in zip(np.asarray(ref_rows, np.int64), ranges):
        window = context_window(seqs, int(ref_row), k, inv=inv)
        refs.append(
            RefWindowMetrics(
                ref_row=int(ref_row),
                range_m=float(rng_m),
                k=k,
                dispersion_m=dispersion(window, voxels, int(ref_row)),
                angular_spread_deg=angular_spread(window, voxels),
                same_sector_frac=same_sector_fraction(
                    window, voxels, int(ref_row), config
                ),
            )
        )
    aggregates = {
        "dispersion_m": _aggregate([r.dispersion_m for r in refs]),
        "angular_spread_deg": _aggregate([r.angular_spread_deg for r in refs]),
        "same_sector_frac": _aggregate([r.same_sector_frac for r in refs]),
    }
    meta = {
        "n_voxels": len(voxels),
        "n_refs": len(refs),
        "delta_theta": config.delta_theta,
    }
    return CoherenceReport(
        strategy=strategy_name,
        scene_id=voxels.scene_id,
        k=k,
        refs=tuple(refs),
        aggregates=aggregates,
        meta=meta,
    )


def compare_strategies(
    voxel_sets: list[SparseVoxelSet],
    strategies: dict[str, SerializationStrategy],
    config: SectorConfig,
    k: int = 360,
    far_field_min_range_m: float = 40.0,
    max_refs_per_scene: int | None = 50,
    seed: int = 0,
    workers: int = 1,
) -> tuple[list[CoherenceReport], dict]:
    """Per-scene, per-strategy window metrics over shared reference voxels.

    References are far-field voxels (BEV range beyond the threshold),
    subsampled deterministically per scene; the same references are used for
    every strategy, so per-scene aggregates pair exactly. The paired summary
    holds mean-dispersion deltas and sign counts per strategy pair.
    """
    reports: list[CoherenceReport] = []
    per_scene_means: dict[str, list[float | None]] = {name: [] for name in strategies}
    for scene_idx, voxels in enumerate(voxel_sets):
        candidates = far_field_rows(voxels, far_field_min_range_m)
        if max_refs_per_scene is not None and candidates.size > max_refs_per_scene:
            rng = np.random.default_rng(np.random.SeedSequence([seed, scene_idx]))
            candidates = np.sort(
                rng.choice(candidates, size=max_refs_per_scene, replace=False)
            )
        for name, strategy in strategies.items():
            report = coherence_report(
                voxels, name, strategy, config, candidates, k=k, workers=workers
            )
            reports.append(report)
            per_scene_means[name].append(report.aggregates["dispersion_m"]["mean"])

    names = list(strategies)
    pairs = []
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            deltas = [
                (ma - mb)
                for ma, mb in zip(per_scene_means[a], per_scene_means[b])
                if ma is not None and mb is not None
            ]
            pairs.append(
                {
                    "first": a,
                    "second": b,
                    "scenes": len(deltas),
                    "mean_dispersion_delta": float(np.mean(deltas)) if deltas else None,
                    "first_lower_count": int(sum(d < 0 for d in deltas)),
                    "second_lower_count": int(sum(d > 0 for d in deltas)),
                    "tie_count": int(sum(d == 0 for d in deltas)),
                }
            )
    summary = {
        "schema_version": SCHEMA_VERSION,
        "k": k,
        "far_field_min_range_m": far_field_min_range_m,
        "seed": seed,
        "window": "symmetric around the reference, reference excluded",
        "hilbert_variant": "full 3D over (z, y, x)",
        "pairs": pairs,
    }
    return reports, summary


CSV_COLUMNS = (
    "scene",
    "strategy",
    "ref_row",
    "range_m",
    "K",
    "dispersion_m",
    "angular_spread_deg",
    "same_sector_frac",
)


def write_coherence_csv(reports: list[CoherenceReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            for ref in report.refs:
                writer.writerow(
                    [
                        report.scene_id,
                        report.strategy,
                        ref.ref_row,
                        f"{ref.range_m:.3f}",
                        ref.k,
                        "" if ref.dispersion_m is None else f"{ref.dispersion_m:.4f}",
                        ""
                        if ref.angular_spread_deg is None
                        else f"{ref.angular_spread_deg:.4f}",
                        ""
                        if ref.same_sector_frac is None
                        else f"{ref.same_sector_frac:.4f}",
                    ]
                )


def write_coherence_json(
    reports: list[CoherenceReport], summary: dict, path
) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "summary": summary,
        "reports": [
            {
                "strategy": r.strategy,
                "scene_id": r.scene_id,
                "k": r.k,
                "aggregates": r.aggregates,
                "meta": r.meta,
                "refs": [asdict(ref) for ref in r.refs],
            }
            for r in reports
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
