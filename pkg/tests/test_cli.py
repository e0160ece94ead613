import json

import numpy as np
import pytest

from rayserde.cli import main
from rayserde.config import RunConfig, build_config, load_config_file
from rayserde.errors import ConfigError
from rayserde.sectors import read_template
from rayserde.simulate import Scene, SensorModel, save_scene, simulate_scan, standard_scene
from rayserde.voxels import write_points_bin


@pytest.fixture()
def sim_cloud(tmp_path):
    cloud, _ = simulate_scan(standard_scene(0), SensorModel(), seed=0, scene_id="c")
    path = tmp_path / "cloud.bin"
    write_points_bin(cloud, path)
    return path


class TestConfig:
    def test_defaults_are_valid(self):
        config = RunConfig()
        assert config.dims == (11, 256, 256)
        assert config.delta_theta == 60.0

    def test_invalid_strategy_names_field(self):
        with pytest.raises(ConfigError, match="strategy"):
            RunConfig(strategy="zorder")

    def test_bad_delta_theta_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(delta_theta=70.0)

    def test_missing_path_names_field(self, tmp_path):
        with pytest.raises(ConfigError, match="scene_path"):
            RunConfig(scene_path=str(tmp_path / "nope.json"))

    def test_file_and_cli_precedence(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text(
            "[sector]\ndelta_theta = 30.0\n\n[run]\nseed = 5\nworkers = 2\n"
        )
        config = build_config(cfg_file, {"seed": 9})
        assert config.delta_theta == 30.0  # from file
        assert config.workers == 2         # from file
        assert config.seed == 9            # CLI wins

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text("[sector]\nangle = 30.0\n")
        with pytest.raises(ConfigError, match="angle"):
            load_config_file(cfg_file)

    def test_tuple_coercion_from_cli_strings(self):
        config = build_config(None, {"dims": "4,16,16", "voxel_size": "1,1,1"})
        assert config.dims == (4, 16, 16)
        assert config.voxel_size == (1.0, 1.0, 1.0)


class TestCliCommands:
    def test_build_template_writes_file_and_report(self, tmp_path):
        out = tmp_path / "t.rayt"
        code = main(
            ["build-template", "--dims", "4,16,16", "--dtheta", "60", "-o", str(out)]
        )
        assert code == 0
        template = read_template(out)
        assert template.sector_of_cell.size == 4 * 16 * 16
        report = json.loads((tmp_path / "build-template.report.json").read_text())
        assert report["schema_version"] == 1
        assert report["results"]["entries_per_array"] == 1024
        assert report["config"]["delta_theta"] == 60.0

    def test_roundtrip_check_exits_zero(self, sim_cloud, tmp_path):
        code = main(
            [
                "roundtrip-check",
                "--cloud", str(sim_cloud),
                "-o", str(tmp_path / "rt"),
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "rt" / "roundtrip-check.report.json").read_text())
        assert report["results"]["roundtrip_identity"] is True

    def test_serialize_dumps_jsonl(self, sim_cloud, tmp_path):
        out = tmp_path / "ser"
        code = main(["serialize", "--cloud", str(sim_cloud), "-o", str(out)])
        assert code == 0
        lines = (out / "sequences.jsonl").read_text().splitlines()
        records = [json.loads(line) for line in lines]
        report = json.loads((out / "serialize.report.json").read_text())
        assert sum(r["count"] for r in records) == report["results"]["n_voxels"]

    def test_simulate_writes_cloud(self, tmp_path):
        scene_path = tmp_path / "scene.json"
        save_scene(standard_scene(1), scene_path)
        out = tmp_path / "sim"
        code = main(
            ["simulate", "--scene", str(scene_path), "--seed", "3", "-o", str(out)]
        )
        assert code == 0
        assert (out / "cloud.bin").exists()
        hits = json.loads((out / "hits.json").read_text())
        assert sum(hits["per_object_returns"].values()) > 0

    def test_ssm_check_report(self, tmp_path):
        out = tmp_path / "ssm"
        code = main(["ssm-check", "--seed", "7", "-o", str(out)])
        assert code == 0
        report = json.loads((out / "ssm-check.report.json").read_text())
        assert report["results"]["rel_err"] <= 1e-4
        assert report["results"]["passed"] is True
        assert (out / "ssm-params.bin").exists()

    def test_metrics_small_suite(self, tmp_path):
        out = tmp_path / "met"
        code = main(
            [
                "metrics",
                "--seed", "0",
                "-o", str(out),
                "--strategies", "ray,hilbert",
                "--K", "64",
            ]
        )
        # default n_scenes is 20; shrink through a config file instead
        assert code == 0
        assert (out / "coherence.csv").exists()
        payload = json.loads((out / "coherence.json").read_text())
        assert payload["summary"]["pairs"][0]["first"] == "ray"

    def test_sector_forward_counters(self, sim_cloud, tmp_path):
        out = tmp_path / "fwd"
        code = main(
            ["sector-forward", "--cloud", str(sim_cloud), "-o", str(out), "--seed", "1"]
        )
        assert code == 0
        report = json.loads((out / "sector-forward.report.json").read_text())
        counters = report["results"]["counters"]
        assert counters["scan_invocations"] == counters["sectors"] > 0

    def test_sector_forward_worker_determinism(self, sim_cloud, tmp_path):
        shas = []
        for i, workers in enumerate(("1", "4")):
            out = tmp_path / f"fwd{i}"
            code = main(
                [
                    "sector-forward",
                    "--cloud", str(sim_cloud),
                    "--workers", workers,
                    "-o", str(out),
                ]
            )
            assert code == 0
            report = json.loads((out / "sector-forward.report.json").read_text())
            shas.append(report["results"]["output_sha256"])
        assert shas[0] == shas[1]

    def test_bench_small(self, tmp_path):
        out = tmp_path / "bench"
        code = main(
            ["bench", "--counts", "1000,2000", "--repeats", "1", "-o", str(out)]
        )
        assert code == 0
        rows = (out / "bench.csv").read_text().splitlines()
        assert rows[0] == "count,lookup_sort_s,scan_s"
        assert len(rows) == 3


class TestCliErrors:
    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["build-template", "--bogus"])
        assert exc.value.code == 2

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_config_violation_exits_one(self, capsys, tmp_path):
        code = main(
            ["build-template", "--dtheta", "77", "-o", str(tmp_path / "t.rayt")]
        )
        assert code == 1
        assert "delta_theta" in capsys.readouterr().err

    def test_missing_cloud_path_exits_one(self, capsys, tmp_path):
        code = main(["serialize", "--cloud", "/nonexistent.bin", "-o", str(tmp_path)])
        assert code == 1
        assert "cloud_path" in capsys.readouterr().err

    def test_config_file_used(self, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text("[grid]\ndims = [4, 16, 16]\n")
        out = tmp_path / "t.rayt"
        code = main(["build-template", "--config", str(cfg), "-o", str(out)])
        assert code == 0
        assert read_template(out).dims == (4, 16, 16)
