"""Model construction, training determinism, checkpoints, comparisons."""

import math
import os

import numpy as np
import pytest

from rope_kit.errors import ConfigurationError, DataError, NumericError
from rope_kit.harness import (
    AdamState,
    ModelConfig,
    TrainConfig,
    build_model,
    compare_runs,
    format_table,
    load_checkpoint,
    load_corpus,
    read_metrics,
    resume,
    save_checkpoint,
    train,
    train_from_scratch,
)
from rope_kit.numerics import Rng, grad_check

TINY = dict(d_model=16, heads=2, layers=1, context_len=8, precision=64)


def tiny_config(**overrides):
    merged = dict(TINY)
    merged.update(overrides)
    return ModelConfig(**merged)


def run_config(tmp_path, corpus, tag, **overrides):
    settings = dict(
        steps=8, batch_size=4, learning_rate=1e-3, seed=42,
        corpus_path=str(corpus),
        metrics_path=str(tmp_path / f"{tag}.csv"),
        checkpoint_path=str(tmp_path / f"{tag}.ckpt"),
    )
    settings.update(overrides)
    return TrainConfig(**settings)


class TestLoadCorpus:
    def test_eight_two_prefix_split(self, tmp_path):
        path = tmp_path / "ten.bin"
        path.write_bytes(bytes(range(10)))
        corpus = load_corpus(path)
        assert len(corpus.train) == 8
        assert len(corpus.validation) == 2
        np.testing.assert_array_equal(corpus.train, np.arange(8))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_corpus(tmp_path / "absent.txt")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_bytes(b"")
        with pytest.raises(DataError):
            load_corpus(path)


class TestModelConfig:
    def test_head_dim_division(self):
        assert ModelConfig(d_model=64, heads=4).head_dim == 16

    def test_odd_head_dim_with_rope_rejected(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(d_model=63, heads=3, pos_encoding="rope")

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(d_model=62, heads=4)

    def test_shaw_requires_softmax(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(pos_encoding="shaw", attention_variant="linear-elu")

    def test_text_roundtrip(self):
        config = tiny_config(pos_encoding="shaw")
        assert ModelConfig.from_text(config.to_text()) == config


class TestBuildModel:
    def test_same_seed_same_parameters(self):
        a = build_model(tiny_config(), Rng(7))
        b = build_model(tiny_config(), Rng(7))
        for pa, pb in zip(a.params, b.params):
            assert pa.name == pb.name
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_different_seed_differs(self):
        a = build_model(tiny_config(), Rng(7))
        b = build_model(tiny_config(), Rng(8))
        assert not np.array_equal(a.params[0].data, b.params[0].data)

    def test_parameter_count_positive(self):
        model = build_model(tiny_config(), Rng(0))
        assert model.parameter_count() == sum(p.data.size for p in model.params)

    @pytest.mark.parametrize("pos_encoding", ["rope", "sinusoidal", "learned", "shaw", "none"])
    def test_initial_loss_near_uniform(self, pos_encoding):
        model = build_model(tiny_config(pos_encoding=pos_encoding), Rng(1))
        rng = Rng(2)
        x = np.array([[rng.randint(256) for _ in range(8)] for _ in range(4)])
        y = np.array([[rng.randint(256) for _ in range(8)] for _ in range(4)])
        loss = model.loss(x, y).item()
        assert abs(loss - math.log(256.0)) < 0.1

    @pytest.mark.parametrize("variant,pos_encoding", [
        ("softmax", "rope"),
        ("softmax", "shaw"),
        ("linear-elu", "rope"),
        ("linear-elu", "none"),
        ("linear-softmax", "rope"),
        ("linear-softmax", "sinusoidal"),
    ])
    def test_full_model_gradients(self, variant, pos_encoding):
        model = build_model(
            tiny_config(attention_variant=variant, pos_encoding=pos_encoding), Rng(3)
        )
        rng = Rng(4)
        x = np.array([[rng.randint(256) for _ in range(8)] for _ in range(2)])
        y = np.array([[rng.randint(256) for _ in range(8)] for _ in range(2)])
        err = grad_check(lambda: model.loss(x, y), model.params, Rng(5), samples=12)
        assert err < 1e-4


class TestTraining:
    def test_steps_zero_rejected(self, tmp_path, small_corpus):
        with pytest.raises(ConfigurationError):
            run_config(tmp_path, small_corpus, "zero", steps=0)

    def test_corpus_shorter_than_context_rejected(self, tmp_path):
        path = tmp_path / "short.txt"
        path.write_bytes(b"abcdefgh")
        config = run_config(tmp_path, path, "short")
        with pytest.raises(DataError):
            train_from_scratch(tiny_config(context_len=16), config)

    def test_metrics_file_format(self, tmp_path, small_corpus):
        config = run_config(tmp_path, small_corpus, "fmt")
        metrics = train_from_scratch(tiny_config(precision=32), config)
        lines = open(config.metrics_path).read().splitlines()
        assert lines[0] == "step,loss"
        assert len(lines) == len(metrics) + 1 == 9
        steps, losses = read_metrics(config.metrics_path)
        np.testing.assert_array_equal(steps, np.arange(1, 9))
        assert losses[0] == metrics[0][1]

    def test_bit_identical_reruns(self, tmp_path, small_corpus):
        a = run_config(tmp_path, small_corpus, "rerun-a")
        b = run_config(tmp_path, small_corpus, "rerun-b")
        train_from_scratch(tiny_config(precision=32), a)
        train_from_scratch(tiny_config(precision=32), b)
        assert open(a.metrics_path, "rb").read() == open(b.metrics_path, "rb").read()
        assert open(a.checkpoint_path, "rb").read() == open(b.checkpoint_path, "rb").read()

    def test_repeated_byte_corpus_collapses_loss(self, tmp_path):
        path = tmp_path / "aaaa.txt"
        path.write_bytes(b"a" * 4000)
        config = run_config(tmp_path, path, "degenerate", steps=60,
                            learning_rate=5e-3, batch_size=4)
        metrics = train_from_scratch(tiny_config(precision=32), config)
        assert metrics[-1][1] < 0.1 * metrics[0][1]
        assert metrics[-1][1] < 0.5

    @pytest.mark.filterwarnings("ignore:overflow")  # the overflow IS the scenario
    def test_divergence_aborts_keeping_metrics(self, tmp_path, small_corpus):
        config = run_config(tmp_path, small_corpus, "diverge",
                            steps=30, learning_rate=1e18)
        with pytest.raises(NumericError):
            train_from_scratch(tiny_config(precision=32), config)
        lines = open(config.metrics_path).read().splitlines()
        assert lines[0] == "step,loss"
        assert len(lines) >= 2  # at least one completed step survived
        assert not os.path.exists(config.checkpoint_path)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path, small_corpus):
        config = run_config(tmp_path, small_corpus, "round")
        train_from_scratch(tiny_config(precision=32), config)
        model, adam, rng, step = load_checkpoint(config.checkpoint_path)
        assert step == 8
        assert model.config == tiny_config(precision=32)
        again = tmp_path / "again.ckpt"
        save_checkpoint(again, model, adam, rng)
        assert open(config.checkpoint_path, "rb").read() == open(again, "rb").read()

    def test_resume_matches_uninterrupted_run(self, tmp_path, small_corpus):
        full = run_config(tmp_path, small_corpus, "full", steps=10)
        train_from_scratch(tiny_config(precision=32), full)

        half = run_config(tmp_path, small_corpus, "half", steps=5)
        train_from_scratch(tiny_config(precision=32), half)
        rest = run_config(tmp_path, small_corpus, "rest", steps=10)
        resume(half.checkpoint_path, rest)

        assert open(full.checkpoint_path, "rb").read() == open(rest.checkpoint_path, "rb").read()
        full_rows = open(full.metrics_path).read().splitlines()
        rest_rows = open(rest.metrics_path).read().splitlines()
        assert full_rows[6:] == rest_rows[1:]  # steps 6..10 agree line for line

    def test_resume_beyond_target_rejected(self, tmp_path, small_corpus):
        config = run_config(tmp_path, small_corpus, "done", steps=4)
        train_from_scratch(tiny_config(precision=32), config)
        with pytest.raises(ConfigurationError):
            resume(config.checkpoint_path, run_config(tmp_path, small_corpus, "done2", steps=4))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTAKIT!" + b"\x00" * 64)
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path, small_corpus):
        config = run_config(tmp_path, small_corpus, "trunc", steps=2)
        train_from_scratch(tiny_config(precision=32), config)
        blob = open(config.checkpoint_path, "rb").read()
        path = tmp_path / "cut.ckpt"
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_adam_moments_restored(self, tmp_path, small_corpus):
        config = run_config(tmp_path, small_corpus, "moments", steps=3)
        train_from_scratch(tiny_config(precision=32), config)
        model, adam, _, step = load_checkpoint(config.checkpoint_path)
        assert adam.step == step == 3
        assert any(np.abs(m).max() > 0 for m in adam.m.values())
        for p in model.params:
            assert adam.m[p.name].shape == p.data.shape


class TestCompareRuns:
    def test_identical_files_zero_difference(self, tmp_path, small_corpus):
        a = run_config(tmp_path, small_corpus, "same-a")
        b = run_config(tmp_path, small_corpus, "same-b")
        train_from_scratch(tiny_config(precision=32), a)
        train_from_scratch(tiny_config(precision=32), b)
        cmp = compare_runs([a.metrics_path, b.metrics_path])
        diff = cmp.losses[cmp.names[0]] - cmp.losses[cmp.names[1]]
        np.testing.assert_array_equal(diff, 0.0)
        assert cmp.auc[cmp.names[0]] == cmp.auc[cmp.names[1]]

    def test_mismatched_grids_rejected(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text("step,loss\n1,2.0\n2,1.5\n")
        b.write_text("step,loss\n1,2.0\n3,1.5\n")
        with pytest.raises(DataError):
            compare_runs([a, b])

    def test_needs_two_files(self, tmp_path):
        a = tmp_path / "a.csv"
        a.write_text("step,loss\n1,2.0\n")
        with pytest.raises(DataError):
            compare_runs([a])

    def test_table_flags_lower_auc(self, tmp_path):
        a = tmp_path / "alpha.csv"
        b = tmp_path / "beta.csv"
        a.write_text("step,loss\n1,2.0\n2,1.0\n")
        b.write_text("step,loss\n1,2.0\n2,1.8\n")
        cmp = compare_runs([a, b])
        assert cmp.best == "alpha"
        table = format_table(cmp)
        assert "alpha" in table and "lowest AUC" in table
