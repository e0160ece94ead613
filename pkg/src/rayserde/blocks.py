"""Per-sector sequence-modeling block over sparse voxel features.

Pipeline of one forward pass: neighborhood mean aggregation, ray-aligned
Spatial-to-Sequence, then independently per non-empty sector project-in,
add positional embeddings, run the selective scan, project-out; finally the
enhanced features are scattered back through the inverse index and fused
with the block input by elementwise addition. Sectors never exchange state,
so per-sector work can run on any number of workers with bit-identical
results.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError, ContractError
from .sectors import SectorTemplate
from .serialize import RayAligned, replace_sequence_features, sequence_to_spatial, spatial_to_sequence
from .ssm import SsmParams, init_ssm_params, selective_scan_fwd
from .voxels import SparseVoxelSet


@dataclass(frozen=True)
class SectorMambaBlock:
    """One sequence-enhancement block: shared scan parameters, a learnable
    positional table of max_len rows, and linear in/out projections between
    the voxel feature width and the scan channel width."""

    layer_index: int
    ssm: SsmParams
    pos_embed: np.ndarray   # (max_len, D)
    w_in: np.ndarray        # (D, D_in)
    w_out: np.ndarray       # (D_in, D)
    aggregation_radius: int = 1
    sinusoidal_pos: bool = False

    def __post_init__(self):
        pos = np.asarray(self.pos_embed, np.float64)
        w_in = np.asarray(self.w_in, np.float64)
        w_out = np.asarray(self.w_out, np.float64)
        d = self.ssm.channel_dim
        if pos.ndim != 2 or pos.shape[1] != d:
            raise ConfigError(f"pos_embed must be (max_len, {d}), got {pos.shape}")
        if w_in.shape[0] != d or w_out.shape[1] != d or w_in.shape[1] != w_out.shape[0]:
            raise ConfigError(
                f"projections must be (D={d}, D_in) and (D_in, D={d}), got "
                f"{w_in.shape} and {w_out.shape}"
            )
        if self.aggregation_radius < 0:
            raise ConfigError("aggregation_radius must be >= 0")
        object.__setattr__(self, "pos_embed", pos)
        object.__setattr__(self, "w_in", w_in)
        object.__setattr__(self, "w_out", w_out)

    @property
    def max_len(self) -> int:
        return self.pos_embed.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def channel_dim(self) -> int:
        return self.ssm.channel_dim


def make_block(
    feature_dim: int,
    channel_dim: int = 16,
    state_dim: int = 16,
    max_len: int = 1 << 17,
    aggregation_radius: int = 1,
    seed: int = 0,
    layer_index: int = 0,
    sinusoidal_pos: bool = False,
    dtype: type = np.float64,
) -> SectorMambaBlock:
    """Seeded block construction; one RNG stream covers embeddings and
    projections so a single seed reproduces the block."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(channel_dim)
    if sinusoidal_pos:
        pos = _sinusoidal_table(max_len, channel_dim)
    else:
        pos = rng.normal(0.0, 0.02, (max_len, channel_dim))
    return SectorMambaBlock(
        layer_index=layer_index,
        ssm=init_ssm_params(channel_dim, state_dim, seed=seed + 1, dtype=dtype),
        pos_embed=pos,
        w_in=rng.uniform(-scale, scale, (channel_dim, feature_dim)),
        w_out=rng.uniform(-scale, scale, (feature_dim, channel_dim)),
        aggregation_radius=aggregation_radius,
        sinusoidal_pos=sinusoidal_pos,
    )


def _sinusoidal_table(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :].astype(np.float64)
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return table


def local_aggregate(voxels: SparseVoxelSet, radius: int) -> SparseVoxelSet:
    """Replace each voxel feature by the mean over active voxels within the
    given Chebyshev radius in cell space (itself included). Radius 0 is the
    identity. Coordinates are untouched."""
    if radius < 0:
        raise ConfigError("radius must be >= 0")
    if radius == 0 or len(voxels) == 0:
        return voxels.with_features(voxels.features.copy())
    coords = voxels.coords
    Z, Y, X = voxels.spec.dims
    lin = voxels.linear_indices()
    sort_idx = np.argsort(lin)
    lin_sorted = lin[sort_idx]

    sums = voxels.features.astype(np.float64).copy()
    counts = np.ones(len(voxels), np.int64)
    r = int(radius)
    for dz in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if dz == 0 and dy == 0 and dx == 0:
                    continue
                nz = coords[:, 0] + dz
                ny = coords[:, 1] + dy
                nx = coords[:, 2] + dx
                valid = (
                    (nz >= 0) & (nz < Z) & (ny >= 0) & (ny < Y)
                    & (nx >= 0) & (nx < X)
                )
                if not valid.any():
                    continue
                target = (nz[valid] * Y + ny[valid]) * X + nx[valid]
                pos = np.searchsorted(lin_sorted, target)
                pos = np.minimum(pos, lin_sorted.size - 1)
                found = lin_sorted[pos] == target
                dst = np.flatnonzero(valid)[found]
                src = sort_idx[pos[found]]
                sums[dst] += voxels.features[src]
                counts[dst] += 1
    return voxels.with_features(sums / counts[:, None])


def positional_embed(
    features: np.ndarray, block: SectorMambaBlock
) -> np.ndarray:
    """Add the first L rows of the positional table to an (L, D) sequence."""
    feats = np.asarray(features, np.float64)
    L = feats.shape[0]
    if L > block.max_len:
        raise CapacityError(
            f"sequence length {L} exceeds positional table max_len {block.max_len}"
        )
    if feats.ndim != 2 or feats.shape[1] != block.channel_dim:
        raise ContractError(
            f"features must be (L, {block.channel_dim}), got {feats.shape}"
        )
    return feats + block.pos_embed[:L]


def sector_mamba_forward(
    voxels: SparseVoxelSet,
    template: SectorTemplate,
    block: SectorMambaBlock,
    workers: int = 1,
    stats: dict | None = None,
) -> SparseVoxelSet:
    """Enhance voxel features with per-sector sequence context.

    Empty sectors are skipped (no scan runs for them); the output holds the
    block input plus the scattered scan results, on the identical coordinate
    set. When ``stats`` is given it receives instrumentation counters
    (scan invocations, sector count, longest sequence).
    """
    if tuple(template.dims) != tuple(voxels.spec.dims):
        raise ConfigError(
            f"template dims {template.dims} != grid dims {voxels.spec.dims}"
        )
    if voxels.n_channels != block.feature_dim and len(voxels) > 0:
        raise ContractError(
            f"voxel channels {voxels.n_channels} != block feature_dim "
            f"{block.feature_dim}"
        )
    if stats is None:
        stats = {}
    stats.update({"scan_invocations": 0, "sectors": 0, "max_seq_len": 0})
    if len(voxels) == 0:
        return voxels.with_features(voxels.features.copy())

    aggregated = local_aggregate(voxels, block.aggregation_radius)
    seqs, inv = spatial_to_sequence(aggregated, RayAligned(template), workers=workers)
    stats["sectors"] = len(seqs.entries)
    lengths = [len(e) for e in seqs.entries]
    stats["max_seq_len"] = max(lengths) if lengths else 0
    too_long = [l for l in lengths if l > block.max_len]
    if too_long:
        raise CapacityError(
            f"sector sequence of length {max(too_long)} exceeds max_len "
            f"{block.max_len}"
        )

    def run_sector(entry_features: np.ndarray) -> np.ndarray:
        z = entry_features @ block.w_in.T
        z = positional_embed(z, block)
        y, _ = selective_scan_fwd(z, block.ssm, keep_cache=False)
        return y @ block.w_out.T

    entry_feats = [e.features for e in seqs.entries]
    if workers <= 1 or len(entry_feats) <= 1:
        enhanced = [run_sector(f) for f in entry_feats]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            enhanced = list(pool.map(run_sector, entry_feats))
    stats["scan_invocations"] = len(entry_feats)

    out_seqs = replace_sequence_features(seqs, enhanced)
    scattered = sequence_to_spatial(out_seqs, inv, voxels)
    return voxels.with_features(voxels.features + scattered.features)
