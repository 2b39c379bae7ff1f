"""CLI surface: subcommands, exit codes, manifests, reproducibility."""

import json
import os

import numpy as np
import pytest

from ccmt.cli import main


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def synth_file(tmp_path):
    path = tmp_path / "data.emb"
    code = main([
        "synth", "--out", str(path), "--task", "separable", "--samples", "24",
        "--seed", "5", "--d", "8", "--k-min", "4", "--k-max", "8",
    ])
    assert code == 0
    return path


class TestHelpAndUsage:
    def test_help_exits_zero(self, capsys):
        code, out, err = run(["--help"], capsys)
        assert code == 0

    def test_subcommand_help_documents_flags(self, capsys):
        code, out, err = run(["train", "--help"], capsys)
        assert code == 0
        for flag in ("--data", "--out", "--seed", "--k", "--d", "--heads", "--head-dim",
                     "--l1", "--l2", "--residual", "--input-projection", "--lr",
                     "--batch", "--epochs", "--repeats", "--metric", "--config"):
            assert flag in out

    def test_unknown_flag_usage_exit_1(self, capsys):
        code, out, err = run(["synth", "--nonsense"], capsys)
        assert code == 1
        assert "usage" in err.lower()

    def test_no_command_exit_1(self, capsys):
        code, out, err = run([], capsys)
        assert code == 1


class TestSynthValidate:
    def test_synth_deterministic(self, tmp_path, capsys):
        p1, p2 = tmp_path / "a.emb", tmp_path / "b.emb"
        args = ["synth", "--task", "xor", "--samples", "64", "--seed", "7", "--d", "6"]
        assert main(args + ["--out", str(p1)]) == 0
        assert main(args + ["--out", str(p2)]) == 0
        assert p1.read_bytes() == p2.read_bytes()

    def test_validate_ok(self, synth_file, capsys):
        code, out, err = run(["validate", "--data", str(synth_file)], capsys)
        assert code == 0
        assert "OK" in out

    def test_validate_truncated_exit_2_with_offset(self, synth_file, capsys):
        trunc = synth_file.with_suffix(".trunc")
        trunc.write_bytes(synth_file.read_bytes()[:-25])
        code, out, err = run(["validate", "--data", str(trunc)], capsys)
        assert code == 2
        assert "offset" in err

    def test_validate_missing_file_exit_2(self, capsys):
        code, out, err = run(["validate", "--data", "/nonexistent/x.emb"], capsys)
        assert code == 2

    def test_synth_manifest_written(self, synth_file):
        manifest = json.loads((synth_file.parent / "data.emb.manifest.json").read_text())
        assert manifest["seeds"]["seed"] == 5
        assert manifest["format_versions"]["dataset"] == 1
        assert "resolved_config" in manifest

    def test_jsonl_round_trip(self, tmp_path, capsys):
        p = tmp_path / "d.jsonl"
        assert main(["synth", "--out", str(p), "--samples", "6", "--jsonl"]) == 0
        code, out, err = run(["validate", "--data", str(p), "--jsonl"], capsys)
        assert code == 0


TINY_TRAIN = [
    "--k", "4", "--d", "8", "--heads", "1", "--head-dim", "8",
    "--l1", "1", "--l2", "1", "--lr", "0.002", "--batch", "8", "--epochs", "2",
]


class TestTrainEval:
    def test_train_eval_cycle(self, synth_file, tmp_path, capsys):
        model_path = tmp_path / "model.ccmt"
        code, out, err = run(
            ["train", "--data", str(synth_file), "--out", str(model_path), "--seed", "1"]
            + TINY_TRAIN,
            capsys,
        )
        assert code == 0, err
        assert model_path.exists()
        assert (tmp_path / "model.ccmt.history.jsonl").exists()
        manifest = json.loads((tmp_path / "model.ccmt.manifest.json").read_text())
        assert manifest["resolved_config"]["model"]["k"] == 4
        assert manifest["resolved_config"]["train"]["epochs"] == 2

        code, out, err = run(
            ["eval", "--model", str(model_path), "--data", str(synth_file),
             "--split", "test", "--split-seed", "1"],
            capsys,
        )
        assert code == 0, err
        assert "accuracy" in out and "uar" in out

    def test_train_reproducible_bit_identical(self, synth_file, tmp_path, capsys):
        m1, m2 = tmp_path / "m1.ccmt", tmp_path / "m2.ccmt"
        base = ["train", "--data", str(synth_file), "--seed", "3"] + TINY_TRAIN
        assert main(base + ["--out", str(m1)]) == 0
        assert main(base + ["--out", str(m2)]) == 0
        assert m1.read_bytes() == m2.read_bytes()

    def test_config_file_precedence(self, synth_file, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"k": 4, "d": 8, "d_h": 8, "heads": 1,
                                        "l1": 1, "l2": 1, "epochs": 1, "lr": 0.001,
                                        "batch_size": 8}))
        model_path = tmp_path / "m.ccmt"
        # flag --epochs 2 must beat the file's epochs 1
        code, out, err = run(
            ["train", "--data", str(synth_file), "--out", str(model_path),
             "--config", str(cfg_file), "--epochs", "2", "--seed", "0"],
            capsys,
        )
        assert code == 0, err
        manifest = json.loads((tmp_path / "m.ccmt.manifest.json").read_text())
        assert manifest["resolved_config"]["train"]["epochs"] == 2
        assert manifest["resolved_config"]["model"]["k"] == 4

    def test_eval_writes_report_and_manifest(self, synth_file, tmp_path, capsys):
        model_path = tmp_path / "m.ccmt"
        assert main(["train", "--data", str(synth_file), "--out", str(model_path),
                     "--seed", "0"] + TINY_TRAIN) == 0
        report_path = tmp_path / "report.json"
        code, out, err = run(
            ["eval", "--model", str(model_path), "--data", str(synth_file),
             "--split", "all", "--out", str(report_path)],
            capsys,
        )
        assert code == 0
        rep = json.loads(report_path.read_text())
        assert "uar" in rep
        assert (tmp_path / "report.json.manifest.json").exists()

    def test_eval_missing_model_exit_2(self, synth_file, capsys):
        code, out, err = run(
            ["eval", "--model", "/nope.ccmt", "--data", str(synth_file)], capsys
        )
        assert code == 2


class TestGradcheckCLI:
    def test_default_tiny_config_passes(self, capsys):
        code, out, err = run(["gradcheck"], capsys)
        assert code == 0
        assert "PASS" in out

    def test_literal_mode(self, capsys):
        code, out, err = run(["gradcheck", "--residual", "literal"], capsys)
        assert code == 0

    def test_failing_tolerance_exit_3(self, capsys):
        code, out, err = run(["gradcheck", "--tolerance", "1e-18"], capsys)
        assert code == 3
        assert "FAIL" in out


class TestBaselineCLI:
    @pytest.mark.parametrize("fusion", ["vote", "mlp"])
    def test_cheap_baselines(self, fusion, synth_file, capsys):
        code, out, err = run(
            ["baseline", "--fusion", fusion, "--data", str(synth_file),
             "--epochs", "2", "--batch", "8", "--lr", "0.01", "--seed", "0", "--k", "4"],
            capsys,
        )
        assert code == 0, err
        assert "accuracy" in out

    def test_repeats_reports_mean_std(self, synth_file, tmp_path, capsys):
        report = tmp_path / "rep.json"
        code, out, err = run(
            ["baseline", "--fusion", "mlp", "--data", str(synth_file),
             "--epochs", "2", "--batch", "8", "--lr", "0.01", "--seed", "0",
             "--k", "4", "--repeats", "2", "--metric", "acc", "--out", str(report)],
            capsys,
        )
        assert code == 0, err
        assert "over 2 runs" in out
        assert len(report.read_text().splitlines()) == 2
        manifest = json.loads((tmp_path / "rep.json.manifest.json").read_text())
        assert manifest["seeds"]["run_seeds"] == [0, 1]

    def test_transformer_baseline(self, synth_file, capsys):
        code, out, err = run(
            ["baseline", "--fusion", "transformer", "--data", str(synth_file),
             "--epochs", "1", "--batch", "8", "--depth", "1", "--heads", "1",
             "--head-dim", "8", "--k", "4", "--seed", "0"],
            capsys,
        )
        assert code == 0, err
        assert "accuracy" in out


class TestExportCLI:
    def test_export_cls(self, synth_file, tmp_path, capsys):
        model_path = tmp_path / "m.ccmt"
        assert main(["train", "--data", str(synth_file), "--out", str(model_path),
                     "--seed", "0"] + TINY_TRAIN) == 0
        out_path = tmp_path / "emb.tsv"
        code, out, err = run(
            ["export-cls", "--model", str(model_path), "--data", str(synth_file),
             "--out", str(out_path)],
            capsys,
        )
        assert code == 0
        lines = out_path.read_text().splitlines()
        assert len(lines) == 24
        assert (tmp_path / "emb.tsv.manifest.json").exists()


class TestSeedEnv:
    def test_ccmt_seed_env_used_as_default(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("CCMT_SEED", "9")
        p1 = tmp_path / "env.emb"
        assert main(["synth", "--out", str(p1), "--samples", "8"]) == 0
        manifest = json.loads((tmp_path / "env.emb.manifest.json").read_text())
        assert manifest["seeds"]["seed"] == 9

    def test_flag_overrides_env(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("CCMT_SEED", "9")
        p1 = tmp_path / "flag.emb"
        assert main(["synth", "--out", str(p1), "--samples", "8", "--seed", "2"]) == 0
        manifest = json.loads((tmp_path / "flag.emb.manifest.json").read_text())
        assert manifest["seeds"]["seed"] == 2
