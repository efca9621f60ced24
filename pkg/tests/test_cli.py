"""Command-line interface: exit codes, outputs, and determinism."""

import json
import os
import signal
import socket
import subprocess
import sys
import time
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np
import pytest

from ensel.classify import ClassifierModel, DetectorModel, load_model
from ensel.cli import main
from ensel.train import load_dataset, save_dataset


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def dir_snapshot(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


class TestGenData:
    def test_writes_dataset(self, tmp_path, capsys):
        out = tmp_path / "data"
        code, stdout, _ = run_cli(
            capsys, "gen-data", "--out", str(out), "--seed", "7", "--per-class", "3")
        assert code == 0
        payload = json.loads(stdout)
        assert payload["written"] == 12
        assert sum(payload["classes"].values()) == 12
        assert len(load_dataset(str(out))) == 12

    def test_same_seed_is_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code, _, _ = run_cli(
                capsys, "gen-data", "--out", str(out), "--seed", "7", "--per-class", "2")
            assert code == 0
        assert dir_snapshot(a) == dir_snapshot(b)

    def test_unwritable_target_fails(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, _, stderr = run_cli(
            capsys, "gen-data", "--out", str(blocker / "sub"), "--seed", "1")
        assert code == 2
        assert stderr.strip()

    def test_missing_seed_is_usage_error(self, tmp_path, capsys):
        code, _, stderr = run_cli(capsys, "gen-data", "--out", str(tmp_path / "d"))
        assert code == 1
        assert "--seed" in stderr


class TestParser:
    def test_no_command(self, capsys):
        assert run_cli(capsys)[0] == 1

    def test_unknown_command(self, capsys):
        assert run_cli(capsys, "frobnicate")[0] == 1

    def test_bad_flag_value(self, tmp_path, capsys):
        code, _, _ = run_cli(
            capsys, "gen-data", "--out", str(tmp_path), "--seed", "NaNny")
        assert code == 1


@pytest.fixture(scope="module")
def tiny_data_dir(tmp_path_factory):
    from conftest import GEO
    from ensel.train import SyntheticSpec, generate_synthetic

    directory = tmp_path_factory.mktemp("tinydata")
    samples = generate_synthetic(SyntheticSpec(per_class=2, noise=8, **GEO), 3)
    save_dataset(samples, str(directory))
    return directory


class TestTrain:
    def test_classifier_end_to_end(self, tiny_data_dir, tmp_path, capsys):
        out = tmp_path / "model.ensl"
        code, stdout, _ = run_cli(
            capsys, "train", "--task", "classifier", "--data", str(tiny_data_dir),
            "--out", str(out), "--seed", "5", "--epochs", "2")
        assert code == 0
        payload = json.loads(stdout)
        assert payload["best_epoch"] >= 1
        assert payload["stop_epoch"] >= payload["best_epoch"]
        assert isinstance(load_model(str(out)), ClassifierModel)
        curve = Path(payload["loss_curve"]).read_text().splitlines()
        assert curve[0] == "epoch,train_loss,val_loss"
        assert len(curve) == 3

    def test_detector_end_to_end(self, tiny_data_dir, tmp_path, capsys):
        out = tmp_path / "det.ensl"
        code, _, _ = run_cli(
            capsys, "train", "--task", "detector", "--data", str(tiny_data_dir),
            "--out", str(out), "--seed", "5", "--epochs", "1", "--batch-size", "4")
        assert code == 0
        assert isinstance(load_model(str(out)), DetectorModel)

    def test_same_seed_twice_identical_model(self, tiny_data_dir, tmp_path, capsys):
        files = []
        for name in ("one.ensl", "two.ensl"):
            out = tmp_path / name
            code, _, _ = run_cli(
                capsys, "train", "--task", "classifier", "--data", str(tiny_data_dir),
                "--out", str(out), "--seed", "9", "--epochs", "2")
            assert code == 0
            files.append(out.read_bytes())
        assert files[0] == files[1]

    def test_divergence_reports_failure(self, tiny_data_dir, tmp_path, capsys):
        with np.errstate(all="ignore"):
            code, _, stderr = run_cli(
                capsys, "train", "--task", "classifier", "--data", str(tiny_data_dir),
                "--out", str(tmp_path / "m.ensl"), "--seed", "0",
                "--epochs", "4", "--lr", "1e200")
        assert code == 2
        assert "epoch" in stderr

    def test_missing_data_dir(self, tmp_path, capsys):
        code, _, _ = run_cli(
            capsys, "train", "--task", "classifier", "--data", str(tmp_path / "nope"),
            "--out", str(tmp_path / "m.ensl"), "--seed", "0")
        assert code == 2


class TestEvaluate:
    def test_writes_table_csv(self, model_dir, test110_dir, tmp_path, capsys):
        out = tmp_path / "table.csv"
        code, stdout, _ = run_cli(
            capsys, "evaluate", "--config", str(model_dir / "pair.json"),
            "--models", str(model_dir), "--data", str(test110_dir),
            "--out", str(out))
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("#")
        assert lines[1] == "model_type,combination,precision,recall,f1,accuracy"
        assert len(lines) == 5  # comment, header, clf-a, clf-b, ensemble
        payload = json.loads(stdout)
        assert [r["combination"] for r in payload["rows"]] == [
            "clf-a", "clf-b", "clf-a+clf-b"]

    def test_bad_registry_dir(self, model_dir, test110_dir, tmp_path, capsys):
        code, _, _ = run_cli(
            capsys, "evaluate", "--config", str(model_dir / "pair.json"),
            "--models", str(tmp_path), "--data", str(test110_dir),
            "--out", str(tmp_path / "t.csv"))
        assert code == 2


class TestDiagnose:
    def write_png(self, sample, path: Path) -> Path:
        from ensel import imaging

        path.write_bytes(imaging.encode(sample.image, "png"))
        return path

    def test_healthy_image_json(self, model_dir, test110, tmp_path, capsys):
        healthy = next(s for s in test110 if s.label == "healthy")
        img = self.write_png(healthy, tmp_path / "h.png")
        overlay = tmp_path / "overlay.png"
        code, stdout, _ = run_cli(
            capsys, "diagnose", "--image", str(img),
            "--config", str(model_dir / "pair.json"), "--models", str(model_dir),
            "--overlay", str(overlay))
        assert code == 0
        payload = json.loads(stdout)
        assert payload["boxes"] == []
        assert payload["final"]["label"] in payload["distribution"]
        assert overlay.exists()

    def test_lesion_image_prints_decision(self, model_dir, test110, tmp_path, capsys):
        lesion = next(s for s in test110 if s.label == "psoriasis-like")
        img = self.write_png(lesion, tmp_path / "l.png")
        code, stdout, _ = run_cli(
            capsys, "diagnose", "--image", str(img),
            "--config", str(model_dir / "pair.json"), "--models", str(model_dir))
        assert code == 0
        payload = json.loads(stdout)
        assert len(payload["boxes"]) >= 1
        assert set(payload["per_model"]) == {"clf-a", "clf-b"}

    def test_output_is_deterministic(self, model_dir, test110, tmp_path, capsys):
        lesion = next(s for s in test110 if s.label == "atopic-like")
        img = self.write_png(lesion, tmp_path / "a.png")
        outputs = []
        for _ in range(2):
            code, stdout, _ = run_cli(
                capsys, "diagnose", "--image", str(img),
                "--config", str(model_dir / "pair.json"), "--models", str(model_dir))
            assert code == 0
            outputs.append(stdout)
        assert outputs[0] == outputs[1]

    def test_undecodable_image(self, model_dir, tmp_path, capsys):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not an image at all")
        code, _, stderr = run_cli(
            capsys, "diagnose", "--image", str(bad),
            "--config", str(model_dir / "pair.json"), "--models", str(model_dir))
        assert code == 2
        assert stderr.strip()


class TestBench:
    def test_jsonl_and_stats(self, model_dir, test110_dir, tmp_path, capsys):
        out = tmp_path / "timings.jsonl"
        code, stdout, _ = run_cli(
            capsys, "bench", "--data", str(test110_dir),
            "--config", str(model_dir / "pair.json"), "--models", str(model_dir),
            "--limit", "3", "--repeats", "2", "--out", str(out))
        assert code == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 6
        for line in lines:
            record = json.loads(line)
            assert record["total_ms"] >= 0
        stats = json.loads(stdout)
        assert stats["count"] == 6
        assert (stats["min_ms"] <= stats["p50_ms"] <= stats["p95_ms"]
                <= stats["p99_ms"] <= stats["max_ms"])

    def test_zero_repeats_rejected(self, model_dir, test110_dir, tmp_path, capsys):
        code, _, _ = run_cli(
            capsys, "bench", "--data", str(test110_dir),
            "--config", str(model_dir / "pair.json"), "--models", str(model_dir),
            "--repeats", "0", "--out", str(tmp_path / "t.jsonl"))
        assert code == 2


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def serve_env(model_dir, data_dir) -> dict:
    env = os.environ.copy()
    env["ENSEL_MODEL_DIR"] = str(model_dir)
    env["ENSEL_CONFIG"] = str(model_dir / "pair.json")
    env["ENSEL_DATA_DIR"] = str(data_dir)
    return env


class TestServe:
    def test_health_and_clean_sigint(self, model_dir, tmp_path):
        port = free_port()
        proc = subprocess.Popen(
            [sys.executable, "-m", "ensel", "serve", "--port", str(port)],
            env=serve_env(model_dir, tmp_path / "data"),
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        try:
            deadline = time.time() + 15
            url = f"http://127.0.0.1:{port}/api/health"
            while True:
                try:
                    with urllib.request.urlopen(url, timeout=1) as resp:
                        assert json.loads(resp.read())["status"] == "ok"
                    break
                except (urllib.error.URLError, ConnectionError):
                    if time.time() > deadline:
                        raise AssertionError("service never came up")
                    time.sleep(0.2)
            proc.send_signal(signal.SIGINT)
            assert proc.wait(timeout=10) == 0
        finally:
            if proc.poll() is None:
                proc.kill()

    def test_port_conflict_fails(self, model_dir, tmp_path):
        with socket.socket() as sock:
            sock.bind(("127.0.0.1", 0))
            sock.listen(1)
            port = sock.getsockname()[1]
            proc = subprocess.Popen(
                [sys.executable, "-m", "ensel", "serve", "--port", str(port)],
                env=serve_env(model_dir, tmp_path / "data"),
                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
            try:
                assert proc.wait(timeout=15) != 0
            finally:
                if proc.poll() is None:
                    proc.kill()
