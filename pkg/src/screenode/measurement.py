"""Transcriptomic readout: ZINB counts, batch shifts, batch plans, pseudobulk."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import BatchOutOfRange, EmptyGroup, InfeasiblePlan
from .experiment import ExperimentCondition, grid_index

# shifts are rounded to multiples of this so that batch sums cancel exactly
_DYADIC = 2.0**-20
_SCALED = 2.0**-40


@dataclass(frozen=True)
class MeasureParams:
    capture_rate: float = 0.15
    dispersion: float = 10.0
    dropout_logit_slope: float = -1.0
    dropout_logit_intercept: float = -1.0
    dropout: bool = True

    def __post_init__(self):
        if not 0.0 < self.capture_rate <= 1.0:
            raise ValueError("capture_rate must lie in (0, 1]")
        if not self.dispersion > 0.0:
            raise ValueError("dispersion must be positive")


def dropout_probability(mean, params: MeasureParams):
    """Extra-zero probability, logistic in log-mean. Zero when dropout is off."""
    mean = np.asarray(mean, dtype=float)
    if not params.dropout:
        return np.zeros_like(mean)
    with np.errstate(divide="ignore"):
        z = params.dropout_logit_intercept + params.dropout_logit_slope * np.log(mean)
    return np.where(mean > 0, 0.5 * (1.0 + np.tanh(0.5 * z)), 1.0)


def expected_capture_fraction(state, params: MeasureParams, depth: float) -> float:
    """Expected total counts divided by total depth-scaled expression."""
    state = np.asarray(state, dtype=float)
    mu = depth * params.capture_rate * state
    total = depth * state.sum()
    if total == 0:
        return 0.0
    return float(np.sum((1.0 - dropout_probability(mu, params)) * mu) / total)


def sample_counts_many(states, params: MeasureParams, depth: float, rng: np.random.Generator) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if np.any(states < 0):
        raise ValueError("states must be non-negative")
    mu = depth * params.capture_rate * states
    r = params.dispersion
    # numpy's negative_binomial(n, p) has mean n(1-p)/p
    p = r / (r + mu)
    counts = rng.negative_binomial(r, p)
    if params.dropout:
        keep = rng.random(mu.shape) >= dropout_probability(mu, params)
        counts = counts * keep
    return counts.astype(np.int64)


def sample_counts(state, params: MeasureParams, depth: float, seed: int) -> np.ndarray:
    """One ZINB count vector with mean ``depth * capture_rate * state`` before dropout."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    return sample_counts_many(state, params, depth, np.random.default_rng(seed))[0]


class NoiseMode(enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


@dataclass(frozen=True)
class BatchNoiseModel:
    scale: float
    per_batch_shift: np.ndarray  # (n_b, n_g), columns sum to exactly zero
    mode: NoiseMode = NoiseMode.ADDITIVE

    @property
    def n_batches(self) -> int:
        return self.per_batch_shift.shape[0]

    def scaled_shifts(self) -> np.ndarray:
        """``scale * per_batch_shift`` re-rounded so columns still cancel exactly."""
        s = np.round(self.scale * self.per_batch_shift / _SCALED) * _SCALED
        if len(s) > 1:
            s[-1] = -s[:-1].sum(axis=0)
        return s

    def shift(self, batch: int) -> np.ndarray:
        if not 0 <= batch < self.n_batches:
            raise BatchOutOfRange(f"batch {batch} outside [0, {self.n_batches})")
        return self.scaled_shifts()[batch]

    def rescaled(self, scale: float) -> "BatchNoiseModel":
        return BatchNoiseModel(scale, self.per_batch_shift, self.mode)


def make_batch_noise(
    n_batches: int,
    n_genes: int,
    scale: float,
    seed: int,
    mode: NoiseMode = NoiseMode.ADDITIVE,
) -> BatchNoiseModel:
    """Standard-normal shifts, recentred so every gene's shifts sum to zero exactly."""
    if n_batches < 1:
        raise ValueError("need at least one batch")
    rng = np.random.default_rng(seed)
    shift = np.zeros((n_batches, n_genes))
    if n_batches > 1:
        z = rng.standard_normal((n_batches, n_genes))
        z -= z.mean(axis=0)
        z = np.round(z / _DYADIC) * _DYADIC
        z[-1] = -z[:-1].sum(axis=0)
        shift = z
    return BatchNoiseModel(float(scale), shift, mode)


def apply_batch_noise(state, batch: int, noise: BatchNoiseModel, clamp: bool = True) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    s = noise.shift(batch)
    if noise.mode is NoiseMode.ADDITIVE:
        out = state + s
    else:
        out = state * (1.0 + s)
    return np.maximum(out, 0.0) if clamp else out


class Strategy(enum.Enum):
    PER_MEDIA = "per_media"
    RANDOM = "random"
    CONTROL_EVERYWHERE = "control_everywhere"


@dataclass(frozen=True)
class BatchPlan:
    """Which (perturbation index, media index) pairs were measured in which batch."""

    n_batches: int
    assignment: frozenset = field(default_factory=frozenset)  # {(i, j, b)}

    def chi(self, i: int, j: int, b: int) -> bool:
        return (i, j, b) in self.assignment

    @property
    def control_batches(self) -> list[int]:
        """Batches that contain unperturbed cells in baseline media."""
        return sorted(b for (i, j, b) in self.assignment if i == 0 and j == 0)

    def batches_of(self, i: int, j: int) -> list[int]:
        return sorted(b for (ii, jj, b) in self.assignment if (ii, jj) == (i, j))

    def members(self, b: int) -> list[tuple[int, int]]:
        return sorted((i, j) for (i, j, bb) in self.assignment if bb == b)

    def without_batches(self, drop) -> "BatchPlan":
        drop = set(drop)
        return BatchPlan(self.n_batches, frozenset(t for t in self.assignment if t[2] not in drop))


def make_batch_plan(
    conditions: list[ExperimentCondition],
    n_batches: int,
    strategy: Strategy,
    seed: int,
) -> BatchPlan:
    if n_batches < 1:
        raise InfeasiblePlan("need at least one batch")
    index = grid_index(conditions)
    cells = sorted(set(index.values()))
    rng = np.random.default_rng(seed)
    if strategy is Strategy.PER_MEDIA:
        n_media = len({j for _, j in cells})
        if n_batches != n_media:
            raise InfeasiblePlan(f"per-media plan needs {n_media} batches, got {n_batches}")
        return BatchPlan(n_batches, frozenset((i, j, j) for i, j in cells))
    if n_batches > len(cells):
        raise InfeasiblePlan(f"{n_batches} batches for only {len(cells)} conditions")
    draws = rng.integers(0, n_batches, size=len(cells))
    triples = {(i, j, int(b)) for (i, j), b in zip(cells, draws)}
    if strategy is Strategy.CONTROL_EVERYWHERE:
        triples |= {(0, 0, b) for b in range(n_batches)}
    return BatchPlan(n_batches, frozenset(triples))


def normalize_counts(cells, target_sum: float | None = None) -> np.ndarray:
    cells = np.atleast_2d(np.asarray(cells, dtype=float))
    totals = cells.sum(axis=1)
    if target_sum is None:
        target_sum = float(np.median(totals))
    scale = np.divide(target_sum, totals, out=np.zeros_like(totals), where=totals > 0)
    return cells * scale[:, None]


def pseudobulk(cells, target_sum: float | None = None, log: bool = True) -> np.ndarray:
    """Per-gene mean of median-normalised (log1p) counts."""
    cells = np.asarray(cells)
    if cells.size == 0 or len(cells) == 0:
        raise EmptyGroup("cannot pseudobulk an empty group")
    norm = normalize_counts(cells, target_sum)
    if log:
        norm = np.log1p(norm)
    return norm.mean(axis=0)
