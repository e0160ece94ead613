"""Command-line interface exposing the full pipeline.

Subcommands: build-template, serialize, roundtrip-check, simulate, metrics,
ssm-check, sector-forward, bench. Every run writes a machine-readable JSON
report (schema-versioned, embedding the resolved config) plus a human
summary into the output directory. Exit codes: 0 success, 1 contract or
format error, 2 usage error. RAYSERDE_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .blocks import make_block, sector_mamba_forward
from .config import RunConfig, STRATEGY_NAMES, build_config
from .errors import ConfigError, ContractError, RayserdeError
from .metrics import compare_strategies, write_coherence_csv, write_coherence_json
from .sectors import SectorConfig, build_template, read_template, write_template
from .serialize import RayAligned, dump_sequences_jsonl, sequence_to_spatial, spatial_to_sequence
from .simulate import load_scene, returns_per_object, simulate_scan, standard_scene, standard_scene_suite
from .ssm import grad_check, init_ssm_params, save_params, selective_scan_fwd
from .voxels import SparseVoxelSet, VoxelGridSpec, read_points_bin, read_points_csv, voxelize, write_points_bin

log = logging.getLogger("rayserde")

SCHEMA_VERSION = 1
GRAD_CHECK_TOL = 1e-4
BENCH_DEFAULT_DIMS = (21, 512, 512)


def _setup_logging() -> None:
    level = os.environ.get("RAYSERDE_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _write_report(
    out_dir: Path,
    command: str,
    config: RunConfig,
    results: dict,
    summary_lines: list[str],
) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "config": config.as_dict(),
        "results": results,
    }
    path = out_dir / f"{command}.report.json"
    path.write_text(json.dumps(report, indent=2) + "\n")
    text = "\n".join(summary_lines)
    (out_dir / f"{command}.summary.txt").write_text(text + "\n")
    print(text)
    return path


def _load_cloud(path: str):
    p = Path(path)
    if p.suffix.lower() == ".csv":
        return read_points_csv(p)
    return read_points_bin(p)


def _template_for(config: RunConfig):
    if config.template_path:
        template = read_template(config.template_path)
        if tuple(template.dims) != tuple(config.dims):
            raise ConfigError(
                f"template_path: template dims {template.dims} do not match "
                f"configured dims {config.dims}"
            )
        return template
    return build_template(config.grid_spec(), config.sector_config())


def _voxels_from_config(config: RunConfig):
    """Voxelized input: the configured cloud file, else a simulated scan of
    the configured (or standard) scene."""
    if config.cloud_path:
        cloud = _load_cloud(config.cloud_path)
    else:
        scene = (
            load_scene(config.scene_path)
            if config.scene_path
            else standard_scene(0, config.seed)
        )
        cloud, _ = simulate_scan(
            scene, config.sensor_model(), seed=config.seed, scene_id="scene-000"
        )
    voxels, dropped = voxelize(cloud, config.grid_spec(), reduce=config.reduce)
    log.info("voxelized %d points -> %d voxels (%d dropped)",
             len(cloud), len(voxels), dropped)
    return voxels, dropped


def _feature_sha256(voxels) -> str:
    h = hashlib.sha256()
    h.update(voxels.coords.tobytes())
    h.update(voxels.features.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_build_template(args, config: RunConfig) -> int:
    template = build_template(config.grid_spec(), config.sector_config())
    out = Path(config.out_dir)
    if out.suffix != ".rayt":
        out = out / "template.rayt"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_template(template, out)
    n = template.sector_of_cell.size
    results = {
        "template_path": str(out),
        "dims": list(template.dims),
        "entries_per_array": n,
        "sectors": template.config.count,
        "file_bytes": out.stat().st_size,
    }
    _write_report(
        out.parent, "build-template", config, results,
        [
            f"template {template.dims} with {n} entries per array "
            f"({template.config.count} sectors of {config.delta_theta} deg)",
            f"wrote {out}",
        ],
    )
    return 0


def cmd_serialize(args, config: RunConfig) -> int:
    if not config.cloud_path:
        raise ConfigError("cloud_path: serialize requires --cloud")
    voxels, dropped = _voxels_from_config(config)
    template = _template_for(config)
    strategy = config.strategy_for(config.strategy, template)
    seqs, _ = spatial_to_sequence(voxels, strategy, workers=config.workers)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_path = out_dir / "sequences.jsonl"
    dump_sequences_jsonl(seqs, dump_path)
    results = {
        "strategy": config.strategy,
        "n_voxels": len(voxels),
        "dropped_points": dropped,
        "sectors": list(seqs.sector_ids),
        "sequence_lengths": [len(e) for e in seqs.entries],
        "dump_path": str(dump_path),
    }
    _write_report(
        out_dir, "serialize", config, results,
        [
            f"serialized {len(voxels)} voxels with strategy "
            f"'{config.strategy}' into {len(seqs.entries)} sequence(s)",
            f"wrote {dump_path}",
        ],
    )
    return 0


def cmd_roundtrip_check(args, config: RunConfig) -> int:
    voxels, _ = _voxels_from_config(config)
    template = _template_for(config)
    strategy = config.strategy_for(config.strategy, template)
    seqs, inv = spatial_to_sequence(voxels, strategy, workers=config.workers)
    restored = sequence_to_spatial(seqs, inv, voxels)
    identical = (
        np.array_equal(restored.coords, voxels.coords)
        and np.array_equal(restored.features, voxels.features)
    )
    if not identical:
        raise ContractError("round trip did not reproduce the input voxels")
    results = {
        "strategy": config.strategy,
        "n_voxels": len(voxels),
        "roundtrip_identity": True,
    }
    _write_report(
        Path(config.out_dir), "roundtrip-check", config, results,
        [f"round trip exact on {len(voxels)} voxels (strategy '{config.strategy}')"],
    )
    return 0


def cmd_simulate(args, config: RunConfig) -> int:
    scene = (
        load_scene(config.scene_path)
        if config.scene_path
        else standard_scene(0, config.seed)
    )
    cloud, record = simulate_scan(
        scene, config.sensor_model(), seed=config.seed, scene_id="scan"
    )
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cloud_path = out_dir / "cloud.bin"
    write_points_bin(cloud, cloud_path)
    counts = returns_per_object(cloud, record)
    (out_dir / "hits.json").write_text(
        json.dumps({"per_object_returns": counts}, indent=2) + "\n"
    )
    results = {
        "n_returns": len(cloud),
        "cloud_path": str(cloud_path),
        "per_object_returns": counts,
        "scene_source": config.scene_path or "standard-scene-0",
    }
    _write_report(
        out_dir, "simulate", config, results,
        [
            f"simulated {len(cloud)} returns over {len(scene.boxes)} boxes "
            f"(ground={scene.ground_plane})",
            f"wrote {cloud_path}",
        ],
    )
    return 0


def cmd_metrics(args, config: RunConfig) -> int:
    spec = config.grid_spec()
    sensor = config.sensor_model()
    if config.scene_path:
        scenes = [load_scene(config.scene_path)]
    else:
        scenes = standard_scene_suite(config.n_scenes, config.seed)
    voxel_sets = []
    for i, scene in enumerate(scenes):
        cloud, _ = simulate_scan(
            scene, sensor, seed=config.seed + i, scene_id=f"scene-{i:03d}"
        )
        voxels, _ = voxelize(cloud, spec, reduce=config.reduce)
        voxel_sets.append(voxels)

    template = _template_for(config)
    wanted = [s.strip() for s in args.strategies.split(",") if s.strip()]
    unknown = [s for s in wanted if s not in STRATEGY_NAMES]
    if unknown:
        raise ConfigError(f"strategy: unknown names {unknown}")
    strategies = {name: config.strategy_for(name, template) for name in wanted}
    reports, summary = compare_strategies(
        voxel_sets,
        strategies,
        template.config,
        k=config.k,
        far_field_min_range_m=config.far_field_min_range_m,
        max_refs_per_scene=config.max_refs,
        seed=config.seed,
        workers=config.workers,
    )
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "coherence.csv"
    json_path = out_dir / "coherence.json"
    write_coherence_csv(reports, csv_path)
    write_coherence_json(reports, summary, json_path)
    lines = [
        f"coherence over {len(voxel_sets)} scene(s), strategies "
        f"{list(strategies)}, K={config.k}"
    ]
    for pair in summary["pairs"]:
        lines.append(
            f"  {pair['first']} vs {pair['second']}: mean dispersion delta "
            f"{pair['mean_dispersion_delta']}, {pair['first']} lower in "
            f"{pair['first_lower_count']}/{pair['scenes']} scenes"
        )
    lines.append(f"wrote {csv_path} and {json_path}")
    _write_report(
        out_dir, "metrics", config,
        {"summary": summary, "csv_path": str(csv_path), "json_path": str(json_path)},
        lines,
    )
    return 0


def cmd_ssm_check(args, config: RunConfig) -> int:
    rng = np.random.default_rng(config.seed)
    d, n = args.channels, config.state_dim
    params = init_ssm_params(d, n, seed=config.seed)
    x = rng.standard_normal((args.length, d))
    report = grad_check(params, x, eps=args.eps)
    passed = report["rel_err"] <= GRAD_CHECK_TOL
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_params(params, out_dir / "ssm-params.bin")
    results = dict(report)
    results.update(
        {
            "channel_dim": d,
            "state_dim": n,
            "sequence_length": args.length,
            "tolerance": GRAD_CHECK_TOL,
            "passed": passed,
            "params_path": str(out_dir / "ssm-params.bin"),
        }
    )
    _write_report(
        out_dir, "ssm-check", config, results,
        [
            f"gradient check (D={d}, N={n}, L={args.length}, eps={args.eps}): "
            f"max rel err {report['rel_err']:.3e} at {report['worst_param']} "
            f"-> {'PASS' if passed else 'FAIL'}"
        ],
    )
    return 0 if passed else 1


def cmd_sector_forward(args, config: RunConfig) -> int:
    voxels, _ = _voxels_from_config(config)
    template = _template_for(config)
    feature_dim = voxels.n_channels if len(voxels) else 4
    block = make_block(
        feature_dim=feature_dim,
        channel_dim=config.channel_dim,
        state_dim=config.state_dim,
        max_len=config.max_len,
        aggregation_radius=config.aggregation_radius,
        seed=config.seed,
        sinusoidal_pos=config.sinusoidal_pos,
        dtype=config.scan_dtype(),
    )
    stats: dict = {}
    enhanced = sector_mamba_forward(
        voxels, template, block, workers=config.workers, stats=stats
    )
    results = {
        "n_voxels": len(voxels),
        "counters": stats,
        "output_sha256": _feature_sha256(enhanced),
    }
    _write_report(
        Path(config.out_dir), "sector-forward", config, results,
        [
            f"sector forward over {len(voxels)} voxels: "
            f"{stats['scan_invocations']} scan(s) across {stats['sectors']} "
            f"non-empty sector(s), longest {stats['max_seq_len']}",
            f"output sha256 {results['output_sha256'][:16]}...",
        ],
    )
    return 0


def _bench_voxels(spec, count: int, rng: np.random.Generator) -> SparseVoxelSet:
    lin = rng.choice(spec.n_cells, size=count, replace=False)
    Z, Y, X = spec.dims
    coords = np.stack(
        [lin // (Y * X), (lin // X) % Y, lin % X], axis=1
    ).astype(np.int64)
    return SparseVoxelSet(
        coords=coords,
        features=rng.standard_normal((count, 4)),
        point_counts=np.ones(count, np.int64),
        spec=spec,
        scene_id=f"bench-{count}",
    )


def cmd_bench(args, config: RunConfig) -> int:
    # without an explicit --dims, bench uses a grid large enough for 1M voxels
    if args.dims:
        spec = config.grid_spec()
    else:
        spec = VoxelGridSpec(voxel_size=config.voxel_size, dims=BENCH_DEFAULT_DIMS)
    template = build_template(
        spec, SectorConfig.for_spec(config.delta_theta, spec)
    )
    counts = [int(c) for c in args.counts.split(",")]
    bad = [c for c in counts if c > spec.n_cells]
    if bad:
        raise ConfigError(
            f"dims: bench counts {bad} exceed the {spec.n_cells}-cell grid"
        )
    rng = np.random.default_rng(config.seed)
    block = make_block(
        feature_dim=4,
        channel_dim=config.channel_dim,
        state_dim=config.state_dim,
        max_len=max(counts) + 1,
        aggregation_radius=0,
        seed=config.seed,
    )
    rows = []
    for count in counts:
        voxels = _bench_voxels(spec, count, rng)
        lookup_times, scan_times = [], []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            seqs, _ = spatial_to_sequence(
                voxels, RayAligned(template), workers=config.workers
            )
            t1 = time.perf_counter()
            for entry in seqs.entries:
                z = entry.features @ block.w_in.T
                selective_scan_fwd(z, block.ssm, keep_cache=False)
            t2 = time.perf_counter()
            lookup_times.append(t1 - t0)
            scan_times.append(t2 - t1)
        rows.append(
            {
                "count": count,
                "lookup_sort_s": float(np.median(lookup_times)),
                "scan_s": float(np.median(scan_times)),
            }
        )
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "bench.csv"
    with open(csv_path, "w") as fh:
        fh.write("count,lookup_sort_s,scan_s\n")
        for row in rows:
            fh.write(f"{row['count']},{row['lookup_sort_s']:.6f},{row['scan_s']:.6f}\n")
    lines = [f"bench on dims {list(spec.dims)} (median of {args.repeats}):"]
    for row in rows:
        lines.append(
            f"  {row['count']:>9} voxels: lookup+sort {row['lookup_sort_s']:.4f}s, "
            f"scan {row['scan_s']:.4f}s"
        )
    lines.append(f"wrote {csv_path}")
    _write_report(
        out_dir, "bench", config,
        {"dims": list(spec.dims), "rows": rows, "csv_path": str(csv_path)},
        lines,
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="TOML config file")
    sub.add_argument("--dims", help="grid dims Z,Y,X")
    sub.add_argument("--voxel-size", dest="voxel_size", help="voxel size dz,dy,dx (m)")
    sub.add_argument("--origin", help="grid origin x0,y0,z0 (m)")
    sub.add_argument("--center", help="BEV center c_x,c_y (cells)")
    sub.add_argument("--dtheta", dest="delta_theta", type=float,
                     help="sector angular step (deg), divisor of 360")
    sub.add_argument("--strategy", choices=STRATEGY_NAMES,
                     help="serialization strategy")
    sub.add_argument("--K", dest="k", type=int, help="context window size")
    sub.add_argument("--seed", type=int, help="base RNG seed")
    sub.add_argument("--workers", type=int, help="worker count")
    sub.add_argument("--precision", choices=("f32", "f64"), help="scan precision")
    sub.add_argument("--reduce", choices=("mean", "max", "count-augmented-mean"),
                     help="voxel feature reduction")
    sub.add_argument("--cloud", dest="cloud_path", help="input cloud (.csv or .bin)")
    sub.add_argument("--scene", dest="scene_path", help="scene JSON file")
    sub.add_argument("--template", dest="template_path", help="template .rayt file")
    sub.add_argument("-o", "--output", dest="out_dir", help="output directory")


_CONFIG_KEYS = (
    "dims", "voxel_size", "origin", "center", "delta_theta", "strategy",
    "k", "seed", "workers", "precision", "reduce", "cloud_path",
    "scene_path", "template_path", "out_dir",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rayserde",
        description="ray-aligned sector-wise serialization of sparse LiDAR voxels",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("build-template", help="build and write a dense sector template")
    _common_flags(p)
    p.set_defaults(handler=cmd_build_template)

    p = subs.add_parser("serialize", help="serialize a cloud and dump sequences")
    _common_flags(p)
    p.set_defaults(handler=cmd_serialize)

    p = subs.add_parser("roundtrip-check", help="verify serialize/scatter identity")
    _common_flags(p)
    p.set_defaults(handler=cmd_roundtrip_check)

    p = subs.add_parser("simulate", help="run the LiDAR simulator")
    _common_flags(p)
    p.set_defaults(handler=cmd_simulate)

    p = subs.add_parser("metrics", help="compare serialization strategies")
    _common_flags(p)
    p.add_argument("--strategies", default="ray,hilbert",
                   help="comma list from ray,hilbert,morton,axis")
    p.set_defaults(handler=cmd_metrics)

    p = subs.add_parser("ssm-check", help="finite-difference gradient check")
    _common_flags(p)
    p.add_argument("--eps", type=float, default=1e-5, help="FD step size")
    p.add_argument("--length", type=int, default=32, help="sequence length")
    p.add_argument("--channels", type=int, default=4, help="channel dim D")
    p.set_defaults(handler=cmd_ssm_check)

    p = subs.add_parser("sector-forward", help="run one sector block forward pass")
    _common_flags(p)
    p.set_defaults(handler=cmd_sector_forward)

    p = subs.add_parser("bench", help="time template lookup+sort and scans")
    _common_flags(p)
    p.add_argument("--counts", default="10000,100000,1000000",
                   help="comma list of voxel counts")
    p.add_argument("--repeats", type=int, default=3, help="runs per count (median)")
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {
        key: getattr(args, key) for key in _CONFIG_KEYS if hasattr(args, key)
    }
    try:
        config = build_config(getattr(args, "config", None), overrides)
        return args.handler(args, config)
    except RayserdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
