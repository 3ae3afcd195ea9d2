"""Reference position encodings the rotary scheme is compared against.

Three baselines: the fixed sinusoidal table, a trainable absolute
embedding table, and clipped-relative key embeddings. The additive ones
share a tiny protocol (``rows(seq)``) so injection into a sequence is one
call regardless of variant.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError, LengthError
from .numerics import Parameter, Rng, Tensor, take_rows

__all__ = [
    "sinusoidal_encoding",
    "SinusoidalTable",
    "LearnedAbsolute",
    "ShawRelative",
    "shaw_clip",
    "additive_inject",
]


def sinusoidal_encoding(position: int, dim: int) -> np.ndarray:
    """Interleaved sin/cos vector: entry 2t is sin(k / 10000^(2t/d)),
    entry 2t+1 the matching cos."""
    if dim < 2 or dim % 2 != 0:
        raise ConfigurationError(f"sinusoidal dim must be even and >= 2, got {dim}")
    if position < 0:
        raise ConfigurationError(f"position must be non-negative, got {position}")
    t = np.arange(dim // 2, dtype=np.float64)
    angle = position / (10000.0 ** (2.0 * t / dim))
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


class SinusoidalTable:
    """Precomputed sinusoidal rows; grows by doubling, entries never change."""

    def __init__(self, dim: int, max_pos: int = 64):
        if dim < 2 or dim % 2 != 0:
            raise ConfigurationError(f"sinusoidal dim must be even and >= 2, got {dim}")
        self.dim = dim
        self.table = self._build(max(max_pos, 1))

    def _build(self, max_pos: int) -> np.ndarray:
        rows = np.stack([sinusoidal_encoding(k, self.dim) for k in range(max_pos)])
        rows.setflags(write=False)
        return rows

    @property
    def max_pos(self) -> int:
        return self.table.shape[0]

    def rows(self, seq: int) -> np.ndarray:
        if seq > self.max_pos:
            grown = self.max_pos
            while grown < seq:
                grown *= 2
            self.table = self._build(grown)
        return self.table[:seq]


class LearnedAbsolute:
    """Trainable per-position vectors; hard capacity, no extrapolation."""

    def __init__(self, max_len: int, dim: int, rng: Rng, scale: float = 0.02, dtype=np.float64):
        if max_len < 1:
            raise ConfigurationError(f"max_len must be >= 1, got {max_len}")
        self.max_len = max_len
        self.dim = dim
        self.embeddings = Parameter(
            "pos_embeddings", rng.normal_array((max_len, dim), scale=scale), dtype=dtype
        )

    def rows(self, seq: int) -> Tensor:
        if seq > self.max_len:
            raise LengthError(
                f"sequence length {seq} exceeds learned-position capacity {self.max_len}"
            )
        return take_rows(self.embeddings.tensor, np.arange(seq))


def shaw_clip(m: int, n: int, r_min: int, r_max: int) -> int:
    """Relative distance m - n clipped into [r_min, r_max]."""
    if r_min > r_max:
        raise ConfigurationError(f"r_min {r_min} > r_max {r_max}")
    return max(r_min, min(r_max, m - n))


class ShawRelative:
    """Trainable key-space embeddings indexed by clipped relative distance.

    Only the key path is kept: the score between positions m and n gains
    the term q_m . e[clip(m - n)] before scaling. The value-path term is
    deliberately dropped (see the attention layer).
    """

    def __init__(self, r_min: int, r_max: int, dim: int, rng: Rng,
                 scale: float = 0.02, dtype=np.float64):
        if r_min > r_max:
            raise ConfigurationError(f"r_min {r_min} > r_max {r_max}")
        self.r_min = r_min
        self.r_max = r_max
        self.dim = dim
        self.key_embeddings = Parameter(
            "shaw_key_embeddings",
            rng.normal_array((r_max - r_min + 1, dim), scale=scale),
            dtype=dtype,
        )

    def clip(self, m: int, n: int) -> int:
        return shaw_clip(m, n, self.r_min, self.r_max)

    def index_matrix(self, seq: int) -> np.ndarray:
        """(seq, seq) embedding-row indices for every (query, key) pair."""
        m = np.arange(seq)[:, None]
        n = np.arange(seq)[None, :]
        return np.clip(m - n, self.r_min, self.r_max) - self.r_min


def additive_inject(x: Tensor, encoding) -> Tensor:
    """x_i + p_i over the sequence axis (second-to-last).

    ``encoding`` is a SinusoidalTable, LearnedAbsolute, or anything with
    ``rows(seq)``; constant tables stay off the gradient tape, learned
    tables join it.
    """
    seq = x.data.shape[-2]
    rows = encoding.rows(seq)
    if not isinstance(rows, Tensor):
        rows = Tensor(np.asarray(rows).astype(x.data.dtype, copy=False))
    if rows.data.shape[-1] != x.data.shape[-1]:
        raise DimensionError(
            f"encoding dim {rows.data.shape[-1]} != input dim {x.data.shape[-1]}"
        )
    return x + rows
