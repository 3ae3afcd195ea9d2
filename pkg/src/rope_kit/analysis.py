"""Executable checks of the rotary scheme's mathematical claims.

Three families:

* the long-term decay curve: the mean magnitude of the partial phase
  sums falls off as relative distance grows, which bounds rotated-score
  magnitudes at long range;
* the summation-by-parts (Abel) identity and the resulting score bound,
  verified on random draws (any violation is an implementation bug, not
  an unlucky sample);
* the 2-d constructive derivation: rotated projections keep their norm,
  advance their angle arithmetically with position, and produce scores
  that depend on positions only through their difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .numerics import Rng
from .rotary import ThetaSchedule, dense_rotation_matrix, make_schedule, rope_score

__all__ = [
    "DecayCurve",
    "decay_curve",
    "windowed_means",
    "write_decay_csv",
    "read_decay_csv",
    "AbelCheckReport",
    "abel_single",
    "abel_identity_check",
    "Derivation2DReport",
    "derivation_oracle_2d",
]

DECAY_CSV_HEADER = "distance,mean_abs_S"


# ---------------------------------------------------------------------------
# Long-term decay curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayCurve:
    """Mean |S_j(r)| against relative distance r.

    S_j(r) is the partial sum of the first j unit phases e^{i r theta};
    the value stored for r averages |S_j(r)| over j = 1..d/2. At r = 0
    every phase is exactly 1, so the value is (d/2 + 1) / 2.
    """

    dim: int
    distances: np.ndarray
    values: np.ndarray


def decay_curve(dim: int, max_distance: int) -> DecayCurve:
    if max_distance < 0:
        raise ConfigurationError(f"max_distance must be >= 0, got {max_distance}")
    schedule = make_schedule(dim)
    distances = np.arange(max_distance + 1)
    values = np.empty(max_distance + 1, dtype=np.float64)
    for r in distances:
        phases = np.exp(1j * r * schedule.thetas)
        partial = np.cumsum(phases)
        values[r] = np.abs(partial).mean()
    return DecayCurve(dim=dim, distances=distances, values=values)


def windowed_means(curve: DecayCurve, width: int = 25, windows: int = 4) -> np.ndarray:
    """Means of consecutive non-overlapping windows starting at r = 0.

    The raw curve oscillates; windowing turns "it decays" into an
    assertable monotonicity statement.
    """
    needed = width * windows
    if len(curve.values) < needed:
        raise ConfigurationError(
            f"curve covers {len(curve.values)} distances, need {needed}"
        )
    return curve.values[:needed].reshape(windows, width).mean(axis=1)


def write_decay_csv(curve: DecayCurve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DECAY_CSV_HEADER + "\n")
        for r, value in zip(curve.distances, curve.values):
            fh.write(f"{int(r)},{float(value)!r}\n")


def read_decay_csv(path) -> DecayCurve:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != DECAY_CSV_HEADER:
            raise DataError(f"unexpected decay CSV header {header!r}")
        distances, values = [], []
        for line in fh:
            r, value = line.strip().split(",")
            distances.append(int(r))
            values.append(float(value))
    return DecayCurve(dim=0, distances=np.array(distances), values=np.array(values))


# ---------------------------------------------------------------------------
# Abel (summation by parts) identity and bound
# ---------------------------------------------------------------------------


@dataclass
class AbelCheckReport:
    trials: int = 0
    max_identity_residual: float = 0.0
    bound_violations: int = 0
    max_score_residual: float = 0.0

    def merge(self, residual: float, bound_ok: bool, score_residual: float) -> None:
        self.trials += 1
        self.max_identity_residual = max(self.max_identity_residual, residual)
        self.max_score_residual = max(self.max_score_residual, score_residual)
        if not bound_ok:
            self.bound_violations += 1


def abel_single(q, k, m: int, n: int, schedule: ThetaSchedule) -> tuple[float, bool, float]:
    """One draw of the summation-by-parts check.

    The rotated score is the real part of sum_i h_i e^{i (m-n) theta_i}
    with h_i the complex product of the i-th coordinate pairs. Returns
    (identity residual between the two summation orders, whether the
    |sum| <= max|h_{i+1}-h_i| * sum|S_{i+1}| bound holds, and the
    residual against the score computed by rotation).
    """
    qa = np.asarray(q, dtype=np.float64)
    ka = np.asarray(k, dtype=np.float64)
    half = schedule.dim // 2
    hq = qa[0::2] + 1j * qa[1::2]
    hk = ka[0::2] + 1j * ka[1::2]
    h = hq * np.conj(hk)
    phases = np.exp(1j * (m - n) * schedule.thetas)

    total = np.sum(h * phases)
    # S_0 = 0 and S_j the partial phase sums; h gets a trailing zero.
    s = np.concatenate([[0.0 + 0.0j], np.cumsum(phases)])
    h_padded = np.concatenate([h, [0.0 + 0.0j]])
    lhs = np.sum(h_padded[:half] * (s[1:] - s[:-1]))
    rhs = -np.sum(s[1:] * (h_padded[1:] - h_padded[:-1]))
    residual = abs(lhs - rhs)

    bound = np.max(np.abs(h_padded[1:] - h_padded[:-1])) * np.sum(np.abs(s[1:]))
    bound_ok = abs(total) <= bound + 1e-12

    score_residual = abs(total.real - rope_score(qa, ka, m, n, schedule))
    return residual, bound_ok, score_residual


def abel_identity_check(rng: Rng, trials: int, dims=(4, 64, 128),
                        max_pos: int = 512) -> AbelCheckReport:
    """Random-draw driver: unit-scale gaussian pairs, positions <= max_pos."""
    report = AbelCheckReport()
    for dim in dims:
        schedule = make_schedule(dim)
        for _ in range(trials):
            q = rng.normal_array((dim,))
            k = rng.normal_array((dim,))
            m = rng.randint(max_pos + 1)
            n = rng.randint(max_pos + 1)
            report.merge(*abel_single(q, k, m, n, schedule))
    return report


# ---------------------------------------------------------------------------
# 2-d derivation oracle
# ---------------------------------------------------------------------------


@dataclass
class Derivation2DReport:
    """Residuals from the 2-d constructive checks, one max per claim."""

    trials: int = 0
    max_initial_residual: float = 0.0      # position 0 acts as identity
    max_radial_residual: float = 0.0       # |f(x, m)| independent of m
    max_angular_residual: float = 0.0      # angle advances by m * theta
    max_relative_residual: float = 0.0     # score depends on n - m only
    tolerances: dict = field(default_factory=lambda: {
        "initial": 1e-12, "radial": 1e-12, "angular": 1e-10, "relative": 1e-10,
    })

    @property
    def passed(self) -> bool:
        return (
            self.max_initial_residual < self.tolerances["initial"]
            and self.max_radial_residual < self.tolerances["radial"]
            and self.max_angular_residual < self.tolerances["angular"]
            and self.max_relative_residual < self.tolerances["relative"]
        )


def _wrap_angle(x: np.ndarray) -> np.ndarray:
    return (x + np.pi) % (2.0 * np.pi) - np.pi


def derivation_oracle_2d(rng: Rng, trials: int, max_m: int = 16) -> Derivation2DReport:
    """Check the 2-d rotation construction on random projections.

    Draws random 2x2 projections, random inputs, and a random nonzero
    frequency, then verifies: rotating to position 0 changes nothing,
    the modulus never depends on position, the phase grows as m * theta
    (mod 2pi), and query/key scores over a position grid collapse onto a
    function of the offset alone.
    """
    report = Derivation2DReport(trials=trials)
    for _ in range(trials):
        w_q = rng.normal_array((2, 2))
        w_k = rng.normal_array((2, 2))
        x_q = rng.normal_array((2,))
        x_k = rng.normal_array((2,))
        theta = 0.1 + 1.9 * rng.uniform()  # nonzero by construction
        schedule = ThetaSchedule(dim=2, thetas=np.array([theta]))

        q0 = w_q @ x_q
        k0 = w_k @ x_k
        base_angle = np.angle(complex(q0[0], q0[1]))
        base_norm = np.hypot(q0[0], q0[1])

        for m in range(max_m + 1):
            rotated = dense_rotation_matrix(schedule, m) @ q0
            if m == 0:
                report.max_initial_residual = max(
                    report.max_initial_residual, float(np.abs(rotated - q0).max())
                )
            norm = np.hypot(rotated[0], rotated[1])
            report.max_radial_residual = max(
                report.max_radial_residual, abs(norm - base_norm)
            )
            angle = np.angle(complex(rotated[0], rotated[1]))
            drift = _wrap_angle(angle - base_angle - m * theta)
            report.max_angular_residual = max(report.max_angular_residual, abs(drift))

        by_offset: dict[int, list[float]] = {}
        for m in range(0, 9, 2):
            for n in range(0, 9, 2):
                score = rope_score(q0, k0, m, n, schedule)
                by_offset.setdefault(n - m, []).append(score)
        for scores in by_offset.values():
            spread = max(scores) - min(scores)
            report.max_relative_residual = max(report.max_relative_residual, spread)
    return report
