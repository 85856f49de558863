"""Path-decomposed screen losses, steady-state and baseline-invariance terms,
and set-to-set distribution losses.

Every objective is built from a flat list of :class:`Row` objects (input,
condition, target, weight). The generic functions here evaluate rows with any
``predict(profile, condition)`` callable; :mod:`screenode.node` consumes the
same rows to get exact gradients for the neural ODE.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptySet, MissingRow, MissingSteadyTarget, ShapeMismatch
from .experiment import (
    BASELINE,
    NO_PERTURBATION,
    ExperimentCondition,
    MediaCondition,
    PathLabel,
    PerturbationMap,
    classify_path,
)

Predictor = Callable[[np.ndarray, ExperimentCondition], np.ndarray]


@dataclass
class Pair:
    input: np.ndarray
    condition: ExperimentCondition
    target: np.ndarray

    def __post_init__(self):
        self.input = np.asarray(self.input, dtype=float)
        self.target = np.asarray(self.target, dtype=float)

    @property
    def path(self) -> PathLabel:
        return classify_path(self.condition)

    @property
    def key(self) -> str:
        return self.condition.key()


@dataclass
class PairedDataset:
    """Input/target profile pairs plus the index sets used by the extra terms.

    ``perturbations[0]`` must be the unperturbed map and ``medias[0]`` the
    baseline media; ``steady_set`` holds ``(perturbation index, media index)``
    pairs and ``assumption2_set`` perturbation indices.
    """

    pairs: list[Pair]
    perturbations: list[PerturbationMap] = field(default_factory=lambda: [NO_PERTURBATION])
    medias: list[MediaCondition] = field(default_factory=lambda: [BASELINE])
    steady_set: frozenset = frozenset()
    assumption2_set: frozenset = frozenset()

    def __post_init__(self):
        if not self.perturbations or not self.perturbations[0].is_none:
            raise ValueError("perturbations[0] must be the unperturbed map")
        if not self.medias or not self.medias[0].is_baseline:
            raise ValueError("medias[0] must be the baseline media")
        self.steady_set = frozenset((int(i), int(j)) for i, j in self.steady_set)
        self.assumption2_set = frozenset(int(i) for i in self.assumption2_set)
        for i, j in self.steady_set:
            if not (0 <= i < len(self.perturbations) and 0 <= j < len(self.medias)):
                raise ValueError(f"steady pair {(i, j)} outside the condition grid")

    @property
    def n_genes(self) -> int:
        return len(self.pairs[0].input) if self.pairs else 0

    def index_of(self, cond: ExperimentCondition) -> tuple[int, int]:
        return self.perturbations.index(cond.perturbation), self.medias.index(cond.media)

    def latest(self, i: int, j: int) -> Pair | None:
        """Row for grid cell (i, j) at the latest measured time."""
        p, m = self.perturbations[i], self.medias[j]
        hits = [q for q in self.pairs if q.condition.perturbation == p and q.condition.media == m]
        return max(hits, key=lambda q: q.condition.time) if hits else None

    def subset(self, keys: Iterable[str]) -> "PairedDataset":
        keys = set(keys)
        return PairedDataset(
            [p for p in self.pairs if p.key in keys],
            self.perturbations,
            self.medias,
            self.steady_set,
            self.assumption2_set,
        )


@dataclass(frozen=True)
class LossConfig:
    include_paths: frozenset = frozenset({1, 2, 3, 4})
    steady_weight: float = 1.0
    steady_extra_time: float | None = None  # None: one extra horizon, s = t
    assumption2_weight: float = 1.0
    distribution_metric: str = "energy"
    base_metric: str = "mse"

    def __post_init__(self):
        if self.steady_weight < 0 or self.assumption2_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.base_metric != "mse":
            raise ValueError("only the MSE base metric is supported")
        object.__setattr__(self, "include_paths", frozenset(int(p) for p in self.include_paths))


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


@dataclass
class Row:
    input: np.ndarray
    condition: ExperimentCondition
    target: np.ndarray
    weight: float
    kind: str  # "path1".."path4", "steady", "a2_fixed", "a2_pair"


def path_rows(data: PairedDataset, config: LossConfig) -> list[Row]:
    return [
        Row(p.input, p.condition, p.target, 1.0, f"path{int(p.path)}")
        for p in data.pairs
        if int(p.path) in config.include_paths
    ]


def steady_rows(data: PairedDataset, s: float | None, config: LossConfig) -> list[Row]:
    """Fixed-point residual rows for every grid cell in the steady set.

    The target profile is fed back in under its own condition for an extra
    time ``s``; a model that respects the steady state returns it unchanged.
    """
    rows = []
    for i, j in sorted(data.steady_set):
        pair = data.latest(i, j)
        if pair is None:
            raise MissingSteadyTarget(f"no dataset row for steady cell {(i, j)}")
        extra = pair.condition.time if s is None else float(s)
        cond = ExperimentCondition(pair.condition.perturbation, pair.condition.media, extra)
        rows.append(Row(pair.target, cond, pair.target, config.steady_weight, "steady"))
    return rows


def assumption2_rows(data: PairedDataset, config: LossConfig) -> list[Row]:
    """Rows for perturbations that leave cells unchanged in baseline media.

    For each such perturbation: a fixed-point residual on its baseline-media
    profile, and one extra pair per non-baseline media that starts from that
    profile and predicts the stimulated outcome.
    """
    rows = []
    for i in sorted(data.assumption2_set):
        if i == 0:
            raise MissingRow("perturbation index 0 is the unperturbed control")
        base = data.latest(i, 0)
        if base is None:
            raise MissingRow(f"no baseline-media row for perturbation {i}")
        pmap = data.perturbations[i]
        t = base.condition.time
        rows.append(
            Row(base.target, ExperimentCondition(pmap, BASELINE, t), base.target,
                config.assumption2_weight, "a2_fixed")
        )
        for j in range(1, len(data.medias)):
            stim = data.latest(i, j)
            if stim is None:
                raise MissingRow(f"no row for perturbation {i} in media {j}")
            rows.append(
                Row(base.target, ExperimentCondition(pmap, data.medias[j], stim.condition.time),
                    stim.target, config.assumption2_weight, "a2_pair")
            )
    return rows


def objective_rows(data: PairedDataset, config: LossConfig, steady: bool = True) -> list[Row]:
    rows = path_rows(data, config)
    if steady and config.steady_weight > 0 and data.steady_set:
        rows += steady_rows(data, config.steady_extra_time, config)
    if config.assumption2_weight > 0 and data.assumption2_set:
        rows += assumption2_rows(data, config)
    return rows


def _evaluate(predict: Predictor, rows: Sequence[Row]) -> np.ndarray:
    return np.array([r.weight * mse(predict(r.input, r.condition), r.target) for r in rows])


@dataclass
class LossBreakdown:
    total: float
    terms: dict[str, dict]

    def to_json(self) -> dict:
        out = {"total": self.total}
        out.update(self.terms)
        return out


def total_loss(predict: Predictor, data: PairedDataset, config: LossConfig = LossConfig()) -> LossBreakdown:
    """Sum of per-pair MSE over the included paths, with per-path counts."""
    rows = path_rows(data, config)
    for r in rows:
        if r.input.shape != r.target.shape:
            raise ShapeMismatch("input and target profiles differ in length")
    vals = _evaluate(predict, rows)
    terms = {}
    for k in (1, 2, 3, 4):
        sel = np.array([r.kind == f"path{k}" for r in rows], dtype=bool)
        terms[f"path{k}"] = {"count": int(sel.sum()), "value": float(np.sum(vals[sel]))}
    return LossBreakdown(float(np.sum(vals)), terms)


@dataclass
class TermResult:
    value: float
    count: int
    residual_count: int = 0


def steady_state_terms(predict: Predictor, data: PairedDataset, s: float | None,
                       config: LossConfig = LossConfig()) -> TermResult:
    rows = steady_rows(data, s, config)
    return TermResult(float(np.sum(_evaluate(predict, rows))), len(rows))


def assumption2_terms(predict: Predictor, data: PairedDataset, config: LossConfig = LossConfig()) -> TermResult:
    rows = assumption2_rows(data, config)
    vals = _evaluate(predict, rows)
    pairs = sum(r.kind == "a2_pair" for r in rows)
    return TermResult(float(np.sum(vals)), pairs, len(rows) - pairs)


def full_breakdown(predict: Predictor, data: PairedDataset, config: LossConfig = LossConfig()) -> LossBreakdown:
    """Path terms plus steady and baseline-invariance terms, as emitted to JSON."""
    base = total_loss(predict, data, config)
    terms = dict(base.terms)
    total = base.total
    if data.steady_set:
        st = steady_state_terms(predict, data, config.steady_extra_time, config)
        terms["steady"] = {"count": st.count, "value": st.value}
        total += st.value
    if data.assumption2_set:
        a2 = assumption2_terms(predict, data, config)
        terms["assumption2"] = {"count": a2.count, "residual_count": a2.residual_count, "value": a2.value}
        total += a2.value
    return LossBreakdown(float(total), terms)


class DistributionMetric(enum.Enum):
    MOMENT_MSE = "moment"
    ENERGY = "energy"
    RANDOM_MATCH = "random_match"


def energy_distance(a, b) -> float:
    """2 E|a-b| - E|a-a'| - E|b-b'| with all expectations over ordered pairs.

    Including the zero self-distances makes the statistic non-negative and
    exactly zero for identical sets.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    cross = cdist(a, b).mean()
    within_a = cdist(a, a).mean() if len(a) > 1 else 0.0
    within_b = cdist(b, b).mean() if len(b) > 1 else 0.0
    return float(max(2.0 * cross - within_a - within_b, 0.0))


def moment_mse(a, b) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return mse(a.mean(axis=0), b.mean(axis=0)) + mse(a.var(axis=0), b.var(axis=0))


def random_match(a, b, seed: int) -> float:
    """Pair every member of the larger set with a random member of the smaller one."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    big, small = (a, b) if len(a) >= len(b) else (b, a)
    idx = np.random.default_rng(seed).integers(0, len(small), size=len(big))
    return float(np.mean((big - small[idx]) ** 2))


def distribution_loss(metric, predicted, observed, seed: int = 0) -> float:
    metric = DistributionMetric(metric) if not isinstance(metric, DistributionMetric) else metric
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.size == 0 or observed.size == 0:
        raise EmptySet("both cell sets must be non-empty")
    if np.atleast_2d(predicted).shape[1] != np.atleast_2d(observed).shape[1]:
        raise ShapeMismatch("cell sets have different gene counts")
    if metric is DistributionMetric.ENERGY:
        return energy_distance(predicted, observed)
    if metric is DistributionMetric.MOMENT_MSE:
        return moment_mse(predicted, observed)
    return random_match(predicted, observed, seed)


def standardized(data: PairedDataset, keys: Iterable[str] | None = None):
    """Z-score every gene using the targets of the pairs in ``keys``.

    Statistics come from training targets only, so held-out pairs do not leak
    into the scaling. Returns ``(dataset, mean, scale)``; genes with zero
    spread keep scale 1.
    """
    keys = None if keys is None else set(keys)
    ref = np.stack([p.target for p in data.pairs if keys is None or p.key in keys])
    mean = ref.mean(axis=0)
    scale = ref.std(axis=0)
    scale[scale == 0] = 1.0
    pairs = [Pair((p.input - mean) / scale, p.condition, (p.target - mean) / scale) for p in data.pairs]
    out = PairedDataset(pairs, data.perturbations, data.medias, data.steady_set, data.assumption2_set)
    return out, mean, scale


def final_time_split(data: PairedDataset, test_perturbations) -> tuple[list[str], list[str]]:
    """Train/test keys holding out the given perturbation indices at the latest time."""
    test_maps = {data.perturbations[i] for i in test_perturbations}
    if any(p.is_none for p in test_maps):
        raise ValueError("the unperturbed control cannot be held out")
    last = max(p.condition.time for p in data.pairs)
    keys = [p.key for p in data.pairs]
    test = {p.key for p in data.pairs if p.condition.time == last and p.condition.perturbation in test_maps}
    return [k for k in keys if k not in test], [k for k in keys if k in test]
