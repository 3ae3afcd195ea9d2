"""Command surface: exit codes, artifacts, config precedence."""

import numpy as np
import pytest

from rope_kit import cli
from rope_kit.errors import ConfigurationError


def run_cli(*argv):
    return cli.main(list(argv))


class TestExitCodes:
    def test_verify_fast_pass(self, capsys):
        assert run_cli("verify", "--trials", "25", "--dims", "2,4,16") == 0
        out = capsys.readouterr().out
        assert "seed: 42" in out
        assert "all 9 suites passed" in out

    def test_verify_odd_dims_usage_error(self, capsys):
        assert run_cli("verify", "--dims", "3") == 2

    def test_verify_zero_trials_usage_error(self):
        assert run_cli("verify", "--trials", "0") == 2

    def test_unknown_flag_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("verify", "--frobnicate")
        assert exc.value.code == 2

    def test_injected_fault_fails_suite(self, monkeypatch, capsys):
        def broken(rng, dims, trials):
            return False, "injected fault"

        patched = list(cli.VERIFY_SUITES)
        patched[1] = (patched[1][0], broken)
        monkeypatch.setattr(cli, "VERIFY_SUITES", patched)
        assert run_cli("verify", "--trials", "5", "--dims", "2") == 1
        out = capsys.readouterr().out
        assert "FAIL" in out and "injected fault" in out


class TestDecayCommand:
    def test_writes_curve(self, tmp_path, capsys):
        out_path = tmp_path / "curve.csv"
        assert run_cli("decay", "--dim", "128", "--max-dist", "250",
                       "--out", str(out_path)) == 0
        lines = out_path.read_text().splitlines()
        assert len(lines) == 252  # header + 251 distances
        assert lines[0] == "distance,mean_abs_S"
        assert lines[1] == "0,32.5"
        printed = capsys.readouterr().out
        assert "strictly decreasing" in printed

    def test_small_dim_value(self, tmp_path, capsys):
        out_path = tmp_path / "d4.csv"
        assert run_cli("decay", "--dim", "4", "--max-dist", "10",
                       "--out", str(out_path)) == 0
        assert out_path.read_text().splitlines()[1] == "0,1.5"

    def test_odd_dim_usage_error(self, tmp_path):
        assert run_cli("decay", "--dim", "5", "--out", str(tmp_path / "x.csv")) == 2

    def test_unwritable_path(self, tmp_path):
        assert run_cli("decay", "--dim", "4", "--max-dist", "5",
                       "--out", str(tmp_path / "missing" / "x.csv")) == 2


class TestBenchCommand:
    def test_outputs_agree_and_report(self, capsys):
        assert run_cli("bench", "--dim", "32", "--seq", "64", "--reps", "3") == 0
        out = capsys.readouterr().out
        assert "outputs agree" in out
        assert "speedup" in out

    def test_zero_reps_usage_error(self):
        assert run_cli("bench", "--reps", "0") == 2


class TestTrainCommand:
    def test_missing_corpus(self, tmp_path):
        assert run_cli("train", "--corpus", str(tmp_path / "nope.txt")) == 2

    def test_short_run_writes_artifacts(self, tmp_path, small_corpus, capsys):
        metrics = tmp_path / "run.csv"
        ckpt = tmp_path / "run.ckpt"
        code = run_cli(
            "train", "--corpus", str(small_corpus), "--steps", "5",
            "--d-model", "16", "--heads", "2", "--layers", "1", "--context", "16",
            "--batch-size", "2", "--variant", "rope",
            "--metrics", str(metrics), "--checkpoint", str(ckpt),
        )
        assert code == 0
        assert len(metrics.read_text().splitlines()) == 6
        assert ckpt.exists()
        out = capsys.readouterr().out
        assert "seed: 42" in out
        assert "parameters:" in out
        assert "final loss" in out

    def test_config_file_with_flag_override(self, tmp_path, small_corpus, capsys):
        config = tmp_path / "run.cfg"
        config.write_text(
            "# toy run\n"
            f"corpus={small_corpus}\n"
            "steps=4\nbatch_size=2\nd_model=16\nheads=2\nlayers=1\ncontext=16\n"
            "variant=sinusoidal\n"
            f"metrics={tmp_path / 'cfg.csv'}\n"
            f"checkpoint={tmp_path / 'cfg.ckpt'}\n"
        )
        code = run_cli("train", "--config", str(config), "--variant", "none",
                       "--metrics", str(tmp_path / "override.csv"),
                       "--checkpoint", str(tmp_path / "override.ckpt"))
        assert code == 0
        out = capsys.readouterr().out
        assert "pos_encoding='none'" in out  # flag beat the file
        assert (tmp_path / "override.csv").exists()
        assert not (tmp_path / "cfg.csv").exists()

    def test_config_file_unknown_key(self, tmp_path):
        config = tmp_path / "bad.cfg"
        config.write_text("momentum=0.9\n")
        assert run_cli("train", "--config", str(config)) == 2

    def test_invalid_variant_rejected_by_parser(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("train", "--variant", "alibi")
        assert exc.value.code == 2


class TestCompareCommand:
    def test_table_printed(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text("step,loss\n1,5.0\n2,4.0\n")
        b.write_text("step,loss\n1,5.0\n2,4.5\n")
        assert run_cli("compare", str(a), str(b)) == 0
        out = capsys.readouterr().out
        assert "lowest AUC" in out

    def test_grid_mismatch(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text("step,loss\n1,5.0\n")
        b.write_text("step,loss\n2,5.0\n")
        assert run_cli("compare", str(a), str(b)) == 2


class TestWorkerThreads:
    def test_explicit_cap(self, monkeypatch):
        monkeypatch.setenv("ROPE_KIT_THREADS", "2")
        assert cli.worker_threads() == 2

    def test_zero_means_auto(self, monkeypatch):
        monkeypatch.setenv("ROPE_KIT_THREADS", "0")
        assert cli.worker_threads() >= 1

    def test_absent_means_auto(self, monkeypatch):
        monkeypatch.delenv("ROPE_KIT_THREADS", raising=False)
        assert cli.worker_threads() >= 1

    def test_garbage_rejected(self, monkeypatch):
        monkeypatch.setenv("ROPE_KIT_THREADS", "many")
        with pytest.raises(ConfigurationError):
            cli.worker_threads()

    def test_negative_rejected(self, monkeypatch):
        monkeypatch.setenv("ROPE_KIT_THREADS", "-3")
        with pytest.raises(ConfigurationError):
            cli.worker_threads()

    def test_verify_honors_cap(self, monkeypatch, capsys):
        monkeypatch.setenv("ROPE_KIT_THREADS", "1")
        assert run_cli("verify", "--trials", "10", "--dims", "2") == 0
