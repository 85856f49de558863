"""Seeded comparison of the plain path loss against the steady-state-augmented loss."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import PairedDataset, standardized
from .node import IntegratorConfig, MLPField, NeuralODE, TrainConfig, TrainResult, train

BASELINE_VARIANT, STEADY_VARIANT = "baseline", "steady"

# settings used for the time-course replica; see README for the rationale
DEFAULT_TRAIN = TrainConfig(learning_rate=5e-3, epochs=300)


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (64, 64)
    embed: tuple = (8, 4)
    n_steps: int = 10
    autonomous: bool = False

    def field_factory(self):
        return lambda g, p, m: MLPField(g, p, m, hidden=self.hidden, embed=self.embed,
                                        autonomous=self.autonomous)


def run_variant(data: PairedDataset, split, seed: int, steady_weight: float,
                model_cfg: ModelConfig = ModelConfig(), tconfig: TrainConfig = DEFAULT_TRAIN) -> TrainResult:
    """Train one model; the seed sets the initial weights and minibatch order."""
    model = NeuralODE.for_dataset(data, model_cfg.field_factory(), IntegratorConfig(model_cfg.n_steps))
    loss = replace(tconfig.loss, steady_weight=steady_weight)
    return train(model, data, split, replace(tconfig, seed=seed, loss=loss))


def _job(args):
    return run_variant(*args)


def _quartiles(v):
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(med), float(q3 - q1)


@dataclass
class CompareSummary:
    seeds: list
    final: dict  # variant -> array of final test MSE, aligned with seeds
    runs: dict = field(default_factory=dict, repr=False)  # (seed, variant) -> TrainResult

    def stats(self, variant: str) -> tuple[float, float]:
        """(median, interquartile range) of the final test MSE across seeds."""
        return _quartiles(self.final[variant])

    @property
    def median_ok(self) -> bool:
        return self.stats(STEADY_VARIANT)[0] <= self.stats(BASELINE_VARIANT)[0]

    @property
    def iqr_ok(self) -> bool:
        return self.stats(STEADY_VARIANT)[1] <= self.stats(BASELINE_VARIANT)[1]

    def to_json(self) -> dict:
        out = {"seeds": list(self.seeds)}
        for v in (BASELINE_VARIANT, STEADY_VARIANT):
            med, iqr = self.stats(v)
            out[v] = {"final_test_mse": [float(x) for x in self.final[v]], "median": med, "iqr": iqr}
        out["steady_median_le_baseline"] = self.median_ok
        out["steady_iqr_le_baseline"] = self.iqr_ok
        return out

    def verdict(self) -> str:
        (mb, ib), (ms, is_) = self.stats(BASELINE_VARIANT), self.stats(STEADY_VARIANT)
        better = "better" if self.median_ok and self.iqr_ok else "not better"
        return (f"steady-augmented loss {better}: median {ms:.6g} vs {mb:.6g}, "
                f"IQR {is_:.6g} vs {ib:.6g} over {len(self.seeds)} seeds")


def train_compare(data: PairedDataset, split, seeds, steady_weight: float = 1.0,
                  model_cfg: ModelConfig = ModelConfig(), tconfig: TrainConfig = DEFAULT_TRAIN,
                  standardize: bool = True, workers: int = 1) -> CompareSummary:
    """Train both loss variants for every seed on the same split.

    The baseline variant drops the steady-state terms (weight 0); everything
    else, including the initial weights, is shared per seed. With
    ``standardize`` every gene is z-scored using training targets, so test MSE
    is in units of per-gene standard deviations.
    """
    seeds = [int(s) for s in seeds]
    if standardize:
        data = standardized(data, split[0])[0]
    jobs = [(data, split, s, w, model_cfg, tconfig)
            for s in seeds for w in (0.0, steady_weight)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    runs, final = {}, {BASELINE_VARIANT: [], STEADY_VARIANT: []}
    for k, res in enumerate(results):
        variant = (BASELINE_VARIANT, STEADY_VARIANT)[k % 2]
        runs[(seeds[k // 2], variant)] = res
        final[variant].append(float(res.test_mse[-1]))
    return CompareSummary(seeds, {k: np.array(v) for k, v in final.items()}, runs)
