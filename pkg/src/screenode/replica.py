"""Synthetic time-course screen with known converging and diverging perturbations.

The network has three kinds of genes:

* regulators (one per perturbation), unregulated and fast turning over;
* a fast module whose genes relax within about a day;
* a slow module (low degradation) that keeps moving for many days.

Converging perturbations hit regulators wired only into the fast module, so
their populations settle before the first measurement. Diverging perturbations
hit regulators wired into the slow module. Wiring is feed-forward, so the
relaxation rates are exactly the degradation rates and ground-truth labels
follow from :func:`screenode.grn.steady_state`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .experiment import BASELINE, NO_PERTURBATION, ExperimentCondition, PerturbationMap, PerturbStatus
from .grn import GrnSpec, sample_population, steady_state
from .losses import Pair, PairedDataset, final_time_split
from .measurement import MeasureParams, sample_counts_many
from .steady import TimeSeriesDataset, detect_steady, select_variable_genes

_STATUSES = (PerturbStatus.KNOCKOUT, PerturbStatus.INTERFERE, PerturbStatus.ACTIVATE)


@dataclass(frozen=True)
class ReplicaConfig:
    n_converging: int = 13  # plus the control, which also converges
    n_diverging: int = 11
    n_fast: int = 60
    n_slow: int = 66
    fast_fanout: int = 14
    slow_fanout: int = 50
    fast_degradation: tuple = (2.5, 4.0)
    slow_degradation: tuple = (0.12, 0.22)
    regulator_degradation: float = 4.0
    weight_range: tuple = (2.0, 3.5)
    slow_weight_range: tuple = (3.0, 5.0)
    days: tuple = (2, 3, 4, 5)
    n_cells: int = 300
    depth: float = 1000.0
    jitter: float = 0.1
    dt: float = 0.1
    keep_genes: int = 120
    label_tol: float = 1e-3
    network_seed: int = 7

    @property
    def n_regulators(self) -> int:
        return self.n_converging + self.n_diverging

    @property
    def n_genes(self) -> int:
        return self.n_regulators + self.n_fast + self.n_slow


def replica_network(cfg: ReplicaConfig = ReplicaConfig()) -> tuple[GrnSpec, list[PerturbationMap]]:
    """Network and perturbation list (index 0 is the control).

    Perturbation order is shuffled so converging and diverging conditions are
    interleaved rather than in two blocks.
    """
    rng = np.random.default_rng(cfg.network_seed)
    n_reg, n = cfg.n_regulators, cfg.n_genes
    fast = np.arange(n_reg, n_reg + cfg.n_fast)
    slow = np.arange(n_reg + cfg.n_fast, n)
    W = np.zeros((n, n))
    for r in range(n_reg):
        if r < cfg.n_converging:
            pool, k, (lo, hi) = fast, cfg.fast_fanout, cfg.weight_range
        else:
            pool, k, (lo, hi) = slow, cfg.slow_fanout, cfg.slow_weight_range
        tgt = rng.choice(pool, size=k, replace=False)
        W[tgt, r] = rng.uniform(lo, hi, size=k) * rng.choice([-1.0, 1.0], size=k)
    d = np.empty(n)
    d[:n_reg] = cfg.regulator_degradation
    d[fast] = rng.uniform(*cfg.fast_degradation, size=len(fast))
    d[slow] = rng.uniform(*cfg.slow_degradation, size=len(slow))
    baseline = rng.uniform(0.5, 2.0, size=n)
    # production sits at half its maximum at baseline: the most responsive point
    spec = GrnSpec.from_baseline(W, baseline, d, 2.0 * d * baseline)
    status = rng.choice(len(_STATUSES), size=n_reg)
    maps = [PerturbationMap.from_dict({r: _STATUSES[status[r]]}) for r in range(n_reg)]
    order = rng.permutation(n_reg)
    return spec, [NO_PERTURBATION] + [maps[k] for k in order]


def steady_labels(spec: GrnSpec, perts, horizon: float, tol: float, dt: float = 0.05) -> list[bool]:
    return [steady_state(spec, ExperimentCondition(p, BASELINE, 0.0), horizon, tol, dt)[1] for p in perts]


@dataclass
class ReplicaScreen:
    spec: GrnSpec
    perturbations: list
    labels: list  # True where the perturbation reaches a steady state by the last day
    series: TimeSeriesDataset  # all genes, linear-scale profiles
    genes: np.ndarray  # indices kept by the variance filter
    log_profiles: dict = field(default_factory=dict)  # (p, day) -> log1p pseudobulk over kept genes

    @property
    def converging(self) -> list[int]:
        return [i for i, ok in enumerate(self.labels) if ok]

    @property
    def diverging(self) -> list[int]:
        return [i for i, ok in enumerate(self.labels) if not ok]

    def filtered_series(self) -> TimeSeriesDataset:
        return self.series.restrict(self.genes)

    def paired(self, steady_set=()) -> PairedDataset:
        """One pair per (perturbation, day): control profile of that day -> perturbed profile."""
        pairs = []
        for i, p in enumerate(self.perturbations):
            for day in self.series.days:
                pairs.append(Pair(self.log_profiles[(0, day)],
                                  ExperimentCondition(p, BASELINE, float(day)),
                                  self.log_profiles[(i, day)]))
        return PairedDataset(pairs, list(self.perturbations), [BASELINE],
                             frozenset((i, 0) for i in steady_set))

    def default_split(self, steady=None) -> tuple[list[str], list[str]]:
        """Hold out the non-steady perturbations at the final day.

        ``steady`` defaults to the ground-truth converging set.
        """
        steady = set(self.converging if steady is None else steady)
        return final_time_split(self.paired(), [i for i in range(len(self.perturbations)) if i not in steady])

    def detect(self, margin: float = 2.0, repeats: int = 5, seed: int = 0) -> list[int]:
        return detect_steady(self.filtered_series(), margin=margin, repeats=repeats, seed=seed)


def build_replica(seed: int, cfg: ReplicaConfig = ReplicaConfig(),
                  params: MeasureParams = MeasureParams()) -> ReplicaScreen:
    """Simulate, measure and pseudobulk the whole screen.

    The network is fixed by ``cfg.network_seed``; ``seed`` drives the cell
    jitter and the count sampling.
    """
    spec, perts = replica_network(cfg)
    labels = steady_labels(spec, perts, float(max(cfg.days)), cfg.label_tol)
    cells = {}
    for i, p in enumerate(perts):
        for k, day in enumerate(cfg.days):
            sim_seed, count_seed = np.random.SeedSequence([seed, i, k]).generate_state(2)
            states = sample_population(spec, ExperimentCondition(p, BASELINE, float(day)),
                                       cfg.n_cells, cfg.jitter, int(sim_seed), cfg.dt)
            cells[(i, day)] = sample_counts_many(states, params, cfg.depth,
                                                 np.random.default_rng(int(count_seed)))
    series = TimeSeriesDataset.from_cells(cfg.days, cells)
    genes = select_variable_genes(series.profiles, cfg.days, cfg.keep_genes)
    log_profiles = {}
    for k, v in cells.items():
        total = v.sum(axis=1, keepdims=True)
        norm = np.divide(series.target_sum * v, total, out=np.zeros(v.shape), where=total > 0)
        log_profiles[k] = np.log1p(norm[:, genes]).mean(axis=0)
    return ReplicaScreen(spec, perts, labels, series, genes, log_profiles)
