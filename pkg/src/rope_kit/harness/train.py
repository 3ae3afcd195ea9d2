"""Seeded training loop: corpus handling, Adam, per-step metrics.

A run is a pure function of (seed, configs, corpus bytes): batches are
drawn from the run's own Rng stream and the metrics file is written with
round-trippable floats, so reruns produce byte-identical artifacts and a
checkpoint resume continues the exact same trajectory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DataError, NumericError
from ..numerics import Rng
from .checkpoint import load_checkpoint, save_checkpoint
from .compare import METRICS_HEADER
from .model import ByteLM, ModelConfig, build_model

__all__ = [
    "Corpus",
    "TrainConfig",
    "AdamState",
    "load_corpus",
    "adam_step",
    "train",
    "train_from_scratch",
    "resume",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class Corpus:
    train: np.ndarray  # uint8
    validation: np.ndarray  # uint8


def load_corpus(path) -> Corpus:
    """Read a file as raw bytes and split train/validation 8:2 by prefix."""
    if not os.path.exists(path):
        raise DataError(f"corpus file not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw:
        raise DataError(f"corpus file is empty: {path}")
    data = np.frombuffer(raw, dtype=np.uint8)
    cut = (len(data) * 8) // 10
    return Corpus(train=data[:cut], validation=data[cut:])


@dataclass
class TrainConfig:
    steps: int
    corpus_path: str
    metrics_path: str
    checkpoint_path: str
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 42

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")


class AdamState:
    """First/second moment accumulators, keyed like the model parameters."""

    def __init__(self, model: ByteLM, step: int = 0):
        self.step = step
        self.m = {p.name: np.zeros_like(p.data) for p in model.params}
        self.v = {p.name: np.zeros_like(p.data) for p in model.params}


def adam_step(model: ByteLM, state: AdamState, lr: float) -> None:
    state.step += 1
    t = state.step
    for p in model.params:
        g = p.gradient
        m = state.m[p.name]
        v = state.v[p.name]
        m[:] = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v[:] = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        p.tensor.data[...] -= (lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(
            p.data.dtype, copy=False
        )


def _sample_batch(corpus: Corpus, rng: Rng, batch_size: int, seq: int):
    span = len(corpus.train) - seq
    if span < 1:
        raise DataError(
            f"training split ({len(corpus.train)} bytes) is not longer than the context ({seq})"
        )
    starts = [rng.randint(span) for _ in range(batch_size)]
    x = np.stack([corpus.train[s : s + seq] for s in starts])
    y = np.stack([corpus.train[s + 1 : s + seq + 1] for s in starts])
    return x, y


def _run_steps(model: ByteLM, adam: AdamState, rng: Rng, corpus: Corpus,
               config: TrainConfig, start_step: int) -> list[tuple[int, float]]:
    metrics: list[tuple[int, float]] = []
    seq = model.config.context_len
    with open(config.metrics_path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for step in range(start_step + 1, config.steps + 1):
            x, y = _sample_batch(corpus, rng, config.batch_size, seq)
            model.zero_grad()
            try:
                loss = model.loss(x, y)
                loss.backward()
            except NumericError:
                fh.flush()  # keep the partial metrics on divergence
                raise
            adam_step(model, adam, config.learning_rate)
            value = float(loss.item())
            metrics.append((step, value))
            fh.write(f"{step},{value!r}\n")
    save_checkpoint(config.checkpoint_path, model, adam, rng)
    return metrics


_BATCH_STREAM = 1  # batch sampling uses its own substream of the seed


def train(model: ByteLM, config: TrainConfig) -> list[tuple[int, float]]:
    """Train a freshly built model; returns the (step, loss) series it
    also wrote to the metrics file."""
    rng = Rng(config.seed).spawn(_BATCH_STREAM)
    corpus = load_corpus(config.corpus_path)
    adam = AdamState(model)
    return _run_steps(model, adam, rng, corpus, config, start_step=0)


def train_from_scratch(model_config: ModelConfig,
                       config: TrainConfig) -> list[tuple[int, float]]:
    """Build with the run seed, then train: one call for the common case."""
    model = build_model(model_config, Rng(config.seed))
    return train(model, config)


def resume(checkpoint_path, config: TrainConfig) -> list[tuple[int, float]]:
    """Continue a checkpointed run up to config.steps (absolute step count)."""
    model, adam, rng, step = load_checkpoint(checkpoint_path)
    if step >= config.steps:
        raise ConfigurationError(
            f"checkpoint is already at step {step}, target is {config.steps}"
        )
    corpus = load_corpus(config.corpus_path)
    return _run_steps(model, adam, rng, corpus, config, start_step=step)
