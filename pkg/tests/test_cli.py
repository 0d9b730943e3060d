import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mirrormamba import cli
from mirrormamba.synth import read_manifest


def run_cli(*args, env_extra=None):
    env = dict(os.environ)
    env["COLUMNS"] = "80"
    if env_extra:
        env.update(env_extra)
    return subprocess.run([sys.executable, "-m", "mirrormamba.cli", *args],
                          capture_output=True, text=True, env=env)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    r = run_cli("gen", "--n-train", "6", "--n-test", "3", "--cues", "all",
                "--seed", "5", "--height", "32", "--width", "32",
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    return out


@pytest.fixture(scope="module")
def small_checkpoint(small_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    r = run_cli("train", "--data", str(small_dataset), "--out", str(out),
                "--epochs", "1", "--base-channels", "2", "--d-state", "2",
                "--batch-size", "4")
    assert r.returncode == 0, r.stderr
    return out / "epoch_0000.mmck"


class TestThreadCap:
    def test_default_is_cpu_count(self, monkeypatch):
        monkeypatch.delenv("MIRRORMAMBA_THREADS", raising=False)
        assert cli.thread_cap() == (os.cpu_count() or 1)

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("MIRRORMAMBA_THREADS", "3")
        assert cli.thread_cap() == 3

    def test_invalid_values(self, monkeypatch):
        monkeypatch.setenv("MIRRORMAMBA_THREADS", "zero")
        with pytest.raises(ValueError):
            cli.thread_cap()
        monkeypatch.setenv("MIRRORMAMBA_THREADS", "0")
        with pytest.raises(ValueError):
            cli.thread_cap()


class TestCueMixParsing:
    def test_forms(self):
        assert cli._parse_cue_mix("all") == {"all": 1.0}
        assert cli._parse_cue_mix("depth=1,flow=2") == {"depth": 1.0, "flow": 2.0}
        assert cli._parse_cue_mix("depth+flow") == {"depth+flow": 1.0}
        with pytest.raises(ValueError):
            cli._parse_cue_mix(",")


class TestHelp:
    def test_top_level_lists_subcommands(self):
        r = run_cli("--help")
        assert r.returncode == 0
        for cmd in ("gen", "train", "eval", "predict", "gradcheck", "bench", "ablate"):
            assert cmd in r.stdout

    def test_every_flag_documented(self):
        # argparse prints flags with their help strings; a flag without help
        # shows up as a bare line, which this guards against
        for cmd in ("gen", "train", "eval", "predict", "gradcheck", "bench", "ablate"):
            r = run_cli(cmd, "--help")
            assert r.returncode == 0, cmd
            lines = r.stdout.splitlines()
            for i, line in enumerate(lines):
                s = line.strip()
                if s.startswith("--") and " " not in s and s != "--help":
                    # bare flag line: help text must follow indented
                    nxt = lines[i + 1].strip() if i + 1 < len(lines) else ""
                    assert nxt, f"{cmd}: flag {s} lacks help text"

    def test_unknown_flag_rejected(self, tmp_path):
        r = run_cli("gen", "--n-train", "1", "--n-test", "1",
                    "--out", str(tmp_path / "x"), "--does-not-exist")
        assert r.returncode == 2
        assert "--does-not-exist" in r.stderr


class TestGen:
    def test_manifest_and_counts(self, small_dataset):
        manifest = read_manifest(str(small_dataset))
        assert manifest["counts"] == {"train": 6, "test": 3}
        assert len(manifest["samples"]) == 9
        for e in manifest["samples"]:
            for f in e["files"].values():
                assert (small_dataset / f).exists()

    def test_error_exit_code(self, tmp_path):
        r = run_cli("gen", "--n-train", "0", "--n-test", "1",
                    "--out", str(tmp_path / "x"))
        assert r.returncode == 1
        assert r.stderr.startswith("error:")


class TestTrainEvalPredict:
    def test_train_writes_log_and_config(self, small_checkpoint):
        run_dir = small_checkpoint.parent
        assert small_checkpoint.exists()
        assert (run_dir / "train.json").exists()
        rows = [json.loads(l) for l in (run_dir / "log.jsonl").read_text().splitlines()]
        assert rows and rows[0]["step"] == 0

    def test_eval_json_report(self, small_dataset, small_checkpoint, tmp_path):
        report = tmp_path / "report.json"
        r = run_cli("eval", "--ckpt", str(small_checkpoint),
                    "--data", str(small_dataset), "--split", "test",
                    "--json-out", str(report))
        assert r.returncode == 0, r.stderr
        assert "IoU" in r.stdout
        d = json.loads(report.read_text())
        assert set(d) >= {"iou", "f_beta", "mae", "accuracy", "num_samples"}
        assert d["num_samples"] == 3

    def test_predict_writes_pgms(self, small_dataset, small_checkpoint, tmp_path):
        out = tmp_path / "preds"
        r = run_cli("predict", "--ckpt", str(small_checkpoint),
                    "--data", str(small_dataset), "--split", "test",
                    "--out", str(out))
        assert r.returncode == 0, r.stderr
        names = sorted(p.name for p in out.iterdir())
        assert "test_00000_prob.pgm" in names
        assert "test_00000_mask.pgm" in names
        assert len(names) == 6  # 3 samples x (prob, mask)

    def test_eval_missing_checkpoint_errors(self, small_dataset):
        r = run_cli("eval", "--ckpt", "/nonexistent.mmck",
                    "--data", str(small_dataset))
        assert r.returncode == 1
        assert r.stderr.startswith("error:")


class TestGradcheckCommand:
    def test_small_run_passes(self):
        r = run_cli("gradcheck", "--seeds", "1", "--skip-model")
        assert r.returncode == 0, r.stderr
        assert "PASS" in r.stdout
        assert "FAIL" not in r.stdout
        assert "checks passed" in r.stdout


class TestBenchCommand:
    def test_csv_shape(self, tmp_path):
        out = tmp_path / "bench.csv"
        r = run_cli("bench", "--lengths", "64,128", "--repeats", "1",
                    "--out", str(out))
        assert r.returncode == 0, r.stderr
        lines = out.read_text().splitlines()
        assert lines[0] == "length,median_seconds"
        assert len(lines) == 3
        assert "doubling ratios:" in r.stdout
