"""CLI subcommands: outputs, determinism, exit codes, config overrides."""

from __future__ import annotations

import json

import pytest

from ovoda.cli import main
from ovoda.config import load_run_config
from ovoda.errors import ConfigError

SMALL = [
    "--set", "synth.n_frames=3",
    "--set", "synth.n_objects=4",
    "--set", 'synth.object_classes=["car","truck","pedestrian","bicycle"]',
    "--set", "synth.background_points=30",
    "--set", "synth.points_per_object=10",
]


def run_synth(tmp_path, seed=9, name="run"):
    out = tmp_path / name
    rc = main(["synth", "--seed", str(seed), "--out", str(out), *SMALL])
    assert rc == 0
    return out


class TestSynthCommand:
    def test_writes_dataset(self, tmp_path, capsys):
        out = run_synth(tmp_path)
        assert (out / "dataset.json").exists()
        stdout = capsys.readouterr().out
        assert '"seed":9' in stdout  # effective config echoes the resolved seed

    def test_byte_identical_across_runs(self, tmp_path):
        a = run_synth(tmp_path, name="a")
        b = run_synth(tmp_path, name="b")
        assert (a / "dataset.json").read_bytes() == (b / "dataset.json").read_bytes()


class TestDetectCommand:
    def test_outputs_and_determinism(self, tmp_path):
        out = run_synth(tmp_path)
        ds = str(out / "dataset.json")
        rc = main(["detect", "--dataset", ds, "--seed", "9", "--out", str(tmp_path / "d1")])
        assert rc == 0
        rc = main(["detect", "--dataset", ds, "--seed", "9", "--out", str(tmp_path / "d2")])
        assert rc == 0
        for name in ("detections.jsonl", "events.jsonl", "events_oracle.jsonl"):
            b1 = (tmp_path / "d1" / name).read_bytes()
            b2 = (tmp_path / "d2" / name).read_bytes()
            assert b1 == b2

    def test_detections_have_expected_fields(self, tmp_path):
        out = run_synth(tmp_path)
        rc = main(["detect", "--dataset", str(out / "dataset.json"), "--seed", "9", "--out", str(out)])
        assert rc == 0
        first = json.loads((out / "detections.jsonl").read_text().splitlines()[0])
        assert {"scene", "frame", "proposal_id", "class_name", "score", "box", "is_novel"} <= set(first)


class TestBuildOvadCommand:
    def test_three_mutually_close_annotations(self, tmp_path, capsys):
        """Three objects all within the gate yield C(3,2) = 3 pair records."""
        out = tmp_path / "tri"
        rc = main([
            "synth", "--seed", "4", "--out", str(out),
            "--set", "synth.n_frames=1",
            "--set", "synth.n_objects=3",
            "--set", 'synth.object_classes=["pedestrian","bicycle","traffic cone"]',
            "--set", "synth.arena_min_radius=6.0",
            "--set", "synth.arena_max_radius=7.0",  # max separation 14 m < gate
            "--set", "synth.moving_fraction=0.0",
            "--set", "synth.background_points=0",
            "--set", "synth.points_per_object=1",
        ])
        assert rc == 0
        rc = main(["build-ovad", "--dataset", str(out / "dataset.json"), "--out", str(out)])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert summary["pairs"] == 3

    def test_pair_records(self, tmp_path, capsys):
        out = run_synth(tmp_path)
        rc = main(["build-ovad", "--dataset", str(out / "dataset.json"), "--out", str(out)])
        assert rc == 0
        lines = (out / "ovad_pairs.jsonl").read_text().splitlines()
        summary = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert summary["pairs"] == len(lines)
        if lines:
            rec = json.loads(lines[0])
            assert {"frame", "id_i", "id_j", "union_box", "relation", "label_text"} <= set(rec)


class TestEvalCommand:
    def test_full_report(self, tmp_path, capsys):
        out = run_synth(tmp_path)
        ds = str(out / "dataset.json")
        main(["detect", "--dataset", ds, "--seed", "9", "--out", str(out)])
        rc = main([
            "eval", "--dataset", ds,
            "--detections", str(out / "detections.jsonl"),
            "--events", str(out / "events.jsonl"),
            "--events-oracle", str(out / "events_oracle.jsonl"),
            "--out", str(out),
        ])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["map"] == pytest.approx(1.0)
        assert report["sr_ad_only"] == pytest.approx(1.0)
        assert report["sr_ad_od"] == pytest.approx(1.0)
        table = capsys.readouterr().out
        assert "mAP" in table


class TestErrorHandling:
    def test_missing_dataset_exits_1(self, capsys):
        rc = main(["detect", "--dataset", "/nonexistent/ds.json", "--seed", "1"])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["kind"] == "config"

    def test_bad_data_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"schema": "other/1"}')
        rc = main(["detect", "--dataset", str(bad), "--seed", "1"])
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["kind"] == "data"

    def test_unreachable_provider_exits_3(self, tmp_path, capsys):
        out = run_synth(tmp_path)
        rc = main([
            "detect", "--dataset", str(out / "dataset.json"), "--seed", "1",
            "--provider-url", "http://127.0.0.1:1",  # nothing listens here
            "--set", "provider.retries=0",
            "--set", "provider.timeout_s=0.2",
            "--out", str(out),
        ])
        assert rc == 3
        err = json.loads(capsys.readouterr().err.strip())
        assert err["kind"] == "provider"

    def test_unknown_config_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            load_run_config(None, ["no_such_section.x=1"])

    def test_losses_check_passes(self, capsys):
        rc = main(["losses-check", "--seed", "3", "--trials", "5"])
        assert rc == 0
        out = capsys.readouterr().out.splitlines()[-1]
        assert json.loads(out)["pass"] is True


class TestConfigFile:
    def test_file_plus_override_priority(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"seed": 5, "temperature": 0.1}))
        cfg = load_run_config(str(cfg_file), ["temperature=0.2"], {"seed": 7})
        assert cfg.seed == 7  # direct flag wins
        assert cfg.temperature == 0.2  # --set beats the file

    def test_nested_override(self):
        cfg = load_run_config(None, ["thresholds.min_objectness=0.9", "provider.dim=64"])
        assert cfg.thresholds.min_objectness == 0.9
        assert cfg.provider.dim == 64
