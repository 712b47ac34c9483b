"""End-to-end CLI tests at tiny scale: artifact layout, determinism,
error exit codes, and the audit hash property."""

import os
import subprocess
import sys

import numpy as np
import pytest

from ppg2ecg.cli import main
from ppg2ecg.config import config_hash, load_config

TINY_INI = """\
[model]
d_model = 8
heads = 2
depths = 2,2,2,2,2
stem_channels = 2

[train]
lr = 0.001
epochs = 2
batch_size = 8
seed = 1

[data]
source = synth
subjects = 3
duration_s = 10
classes = 0
split = 1.0,0.0,0.0
"""

CLF_INI = """\
[model]
d_model = 8
heads = 2
depths = 2,2,2,2,2
stem_channels = 2

[train]
lr = 0.001
epochs = 2
batch_size = 8
seed = 1

[data]
source = synth
subjects = 6
duration_s = 10
classes = 2
heart_rate_bpm = 60
split = 0.5,0.0,0.5

[task]
kind = classify
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY_INI)
    (root / "clf.ini").write_text(CLF_INI)
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    out = workdir / "recon"
    assert main(["train-recon", "--config", str(workdir / "tiny.ini"), "--out", str(out)]) == 0
    return out


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def strip_wall_clock(text):
    return "\n".join(l for l in text.splitlines() if not l.startswith("wall_clock"))


class TestSynth:
    def test_writes_recordings_manifest_and_config(self, workdir):
        out = workdir / "data"
        assert main(["synth", "--config", str(workdir / "tiny.ini"), "--out", str(out)]) == 0
        assert (out / "recordings.csv").exists()
        assert (out / "windows.csv").exists()
        assert (out / "config.resolved").exists()
        assert (out / "report.txt").exists()
        assert sorted(p.name for p in out.glob("s*.csv")) == ["s000.csv", "s001.csv", "s002.csv"]

    def test_rerun_is_byte_identical(self, workdir):
        a = workdir / "data_a"
        b = workdir / "data_b"
        for out in (a, b):
            assert main(["synth", "--config", str(workdir / "tiny.ini"), "--out", str(out)]) == 0
        for name in ["s000.csv", "recordings.csv", "windows.csv", "config.resolved"]:
            assert read(a / name) == read(b / name), name
        assert strip_wall_clock(read(a / "report.txt").decode()) == strip_wall_clock(
            read(b / "report.txt").decode()
        )


class TestTrainRecon:
    def test_artifacts(self, workdir, trained):
        assert (trained / "ckpt" / "manifest.txt").exists()
        assert (trained / "ckpt" / "params.bin").exists()
        assert (trained / "loss_trace.csv").exists()
        report = read(trained / "report.txt").decode()
        assert "task = train-recon" in report
        assert "rmse_train_mean" in report

    def test_rerun_reproduces_checkpoint_bitwise(self, workdir, trained):
        again = workdir / "recon_again"
        assert main(["train-recon", "--config", str(workdir / "tiny.ini"), "--out", str(again)]) == 0
        assert read(trained / "ckpt" / "params.bin") == read(again / "ckpt" / "params.bin")
        assert read(trained / "loss_trace.csv") == read(again / "loss_trace.csv")

    def test_report_hash_matches_recomputed(self, workdir, trained):
        report = read(trained / "report.txt").decode()
        line = [l for l in report.splitlines() if l.startswith("config_hash")][0]
        reported = line.split("=")[1].strip()
        assert reported == config_hash(load_config(workdir / "tiny.ini"))
        resolved = read(trained / "config.resolved").decode()
        assert f"# config_hash={reported}" in resolved

    def test_fixed_patch_flag(self, workdir):
        out = workdir / "recon_fixed"
        assert (
            main(
                [
                    "train-recon",
                    "--config",
                    str(workdir / "tiny.ini"),
                    "--out",
                    str(out),
                    "--fixed-patch",
                    "128",
                ]
            )
            == 0
        )
        manifest = read(out / "ckpt" / "manifest.txt").decode()
        assert "enc.s0.pos\t4,8" in manifest  # 4 tokens of 128 samples, one stage
        assert "merge" not in manifest
        non_divisor = main(
            [
                "train-recon",
                "--config",
                str(workdir / "tiny.ini"),
                "--out",
                str(workdir / "x"),
                "--fixed-patch",
                "100",
            ]
        )
        assert non_divisor == 2


class TestEvaluateReconstructAttn:
    def test_evaluate(self, workdir, trained):
        out = workdir / "eval"
        assert (
            main(
                [
                    "evaluate",
                    "--config",
                    str(workdir / "tiny.ini"),
                    "--model",
                    str(trained / "ckpt"),
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        report = read(out / "report.txt").decode()
        assert "rmse_train_mean" in report
        value = float([l for l in report.splitlines() if l.startswith("rmse_train_mean")][0].split("=")[1])
        assert value >= 0

    def test_reconstruct_row_count(self, workdir, trained):
        data = workdir / "data"
        out = workdir / "rec"
        assert (
            main(
                [
                    "reconstruct",
                    "--config",
                    str(workdir / "tiny.ini"),
                    "--model",
                    str(trained / "ckpt"),
                    "--input",
                    str(data / "s000.csv"),
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        lines = read(out / "ecg_hat.csv").decode().strip().split("\n")
        assert lines[0] == "window,sample,value"
        n_windows = 4  # 10 s recording -> starts {0, 256, 512, 768}
        assert len(lines) - 1 == 512 * n_windows
        float(lines[1].split(",")[2])  # values parse as plain floats

    def test_attnmap_layout(self, workdir, trained):
        data = workdir / "data"
        out = workdir / "attn"
        assert (
            main(
                [
                    "attnmap",
                    "--config",
                    str(workdir / "tiny.ini"),
                    "--model",
                    str(trained / "ckpt"),
                    "--input",
                    str(data / "s000.csv"),
                    "--out",
                    str(out),
                    "--scope",
                    "last",
                ]
            )
            == 0
        )
        lines = read(out / "attention.csv").decode().strip().split("\n")
        assert lines[0] == "stage,block,head,query,key,weight"
        # final cross-attention block: heads * 16 queries * 16 keys
        assert len(lines) - 1 == 2 * 16 * 16


@pytest.fixture(scope="module")
def recon_ckpt(workdir):
    out = workdir / "recon_clf"
    assert main(["train-recon", "--config", str(workdir / "clf.ini"), "--out", str(out)]) == 0
    return out / "ckpt"


class TestClassifierCommands:
    def test_train_clf_and_classify(self, workdir, recon_ckpt):
        out = workdir / "clf"
        assert (
            main(
                [
                    "train-clf",
                    "--config",
                    str(workdir / "clf.ini"),
                    "--recon",
                    str(recon_ckpt),
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        assert (out / "ckpt" / "params.bin").exists()
        assert (out / "confusion.csv").exists()
        data = workdir / "clf_data"
        assert main(["synth", "--config", str(workdir / "clf.ini"), "--out", str(data)]) == 0
        pred = workdir / "pred"
        assert (
            main(
                [
                    "classify",
                    "--config",
                    str(workdir / "clf.ini"),
                    "--model",
                    str(out / "ckpt"),
                    "--recon",
                    str(recon_ckpt),
                    "--input",
                    str(data / "s001.csv"),
                    "--out",
                    str(pred),
                ]
            )
            == 0
        )
        lines = read(pred / "predictions.csv").decode().strip().split("\n")
        assert lines[0] == "window,start,label,p_Normal,p_Diabetes"
        probs = [float(x) for x in lines[1].split(",")[3:]]
        assert abs(sum(probs) - 1.0) < 1e-6

    def test_ablation_table(self, workdir, recon_ckpt):
        out = workdir / "abl"
        assert (
            main(
                [
                    "ablation",
                    "--config",
                    str(workdir / "clf.ini"),
                    "--recon",
                    str(recon_ckpt),
                    "--variants",
                    "ppg,ppg+recon",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        lines = read(out / "ablation.csv").decode().strip().split("\n")
        assert lines[0] == "class,ppg,ppg+recon"
        assert len(lines) == 3

    def test_ablation_without_recon_fails_for_recon_variant(self, workdir):
        code = main(
            [
                "ablation",
                "--config",
                str(workdir / "clf.ini"),
                "--variants",
                "ppg+recon",
                "--out",
                str(workdir / "abl_bad"),
            ]
        )
        assert code == 2


class TestCsvSource:
    def test_train_from_csv_directory(self, workdir):
        data = workdir / "data"
        csv_ini = workdir / "csv.ini"
        csv_ini.write_text(
            TINY_INI.replace("source = synth", f"source = csv\ndir = {data}")
        )
        out = workdir / "recon_csv"
        assert main(["train-recon", "--config", str(csv_ini), "--out", str(out)]) == 0
        assert (out / "ckpt" / "params.bin").exists()


class TestErrorPaths:
    def test_missing_config_exit_2(self, workdir):
        assert main(["synth", "--config", str(workdir / "nope.ini"), "--out", str(workdir / "x")]) == 2

    def test_checkpoint_architecture_mismatch_exit_2(self, workdir, trained):
        other_ini = workdir / "wider.ini"
        other_ini.write_text(TINY_INI.replace("d_model = 8", "d_model = 16"))
        code = main(
            [
                "evaluate",
                "--config",
                str(other_ini),
                "--model",
                str(trained / "ckpt"),
                "--out",
                str(workdir / "x2"),
            ]
        )
        assert code == 2

    def test_gradcheck_passes_quickly(self, workdir):
        assert main(["gradcheck", "--config", str(workdir / "tiny.ini"), "--cases", "3"]) == 0

    def test_console_entry_point(self, workdir):
        proc = subprocess.run(
            [sys.executable, "-m", "ppg2ecg.cli", "--help"],
            capture_output=True,
            text=True,
            env={**os.environ},
        )
        assert proc.returncode == 0
        assert "train-recon" in proc.stdout


def test_reports_differ_only_in_wall_clock(workdir, trained):
    again = workdir / "recon_again2"
    assert main(["train-recon", "--config", str(workdir / "tiny.ini"), "--out", str(again)]) == 0
    a = strip_wall_clock(read(trained / "report.txt").decode())
    b = strip_wall_clock(read(again / "report.txt").decode())
    assert a == b
