"""How batch effects limit what a batch-aware learned map can recover.

A learned map ``F_L(y, b' -> b)`` takes a profile measured in batch ``b'``,
undoes that batch's shift, applies the true dynamics and re-applies the shift
of target batch ``b``. The estimator ``F_*`` averages it over every target
batch and over every batch ``b'`` that contains unperturbed baseline cells.
Its squared distance to the true map at a point ``x`` is the error ``eps``.

The true map is any batched oracle ``(X, conditions) -> states``; the network
simulator and a trained neural ODE both provide one.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NoControlBatch
from .experiment import ExperimentCondition, MediaCondition, PerturbationMap, enumerate_conditions, grid_index
from .grn import GrnSpec, integrate
from .io import rows_to_csv
from .measurement import BatchNoiseModel, BatchPlan, NoiseMode, Strategy, make_batch_noise, make_batch_plan

Oracle = Callable[[np.ndarray, Sequence[ExperimentCondition]], np.ndarray]


def grn_oracle(spec: GrnSpec, dt: float = 0.01) -> Oracle:
    """Batched network simulation; each row gets its own perturbation and media."""

    def run(X, conds):
        X = np.maximum(np.atleast_2d(np.asarray(X, dtype=float)), 0.0)
        out = np.empty_like(X)
        times = np.array([c.time for c in conds])
        for t in np.unique(times):
            rows = np.flatnonzero(times == t)
            mult = np.stack([spec.multipliers(conds[r].perturbation) for r in rows])
            media = np.stack([spec.media_vector(conds[r].media) for r in rows])
            out[rows] = integrate(spec, X[rows], mult, media, float(t), dt)
        return out

    return run


def node_oracle(model, params, integ=None) -> Oracle:
    """Use a trained neural ODE in place of the simulator."""
    return lambda X, conds: model.forward_batch(params, X, list(conds), integ)


class Correction(enum.Enum):
    NONE = "none"
    BATCH_MEAN_CENTER = "batch_mean_center"


def _observe(v, shift, offset, mode: NoiseMode):
    return (v + shift if mode is NoiseMode.ADDITIVE else v * (1.0 + shift)) - offset


def _unobserve(v, shift, offset, mode: NoiseMode):
    v = v + offset
    return v - shift if mode is NoiseMode.ADDITIVE else v / (1.0 + shift)


@dataclass
class FStar:
    """The batch-averaged estimator at one evaluation point.

    ``offsets[b]`` is the per-batch shift estimate removed by the correction
    (zero without correction); it is computed from what each batch would
    contain when every grid condition is observed from ``x``.
    """

    oracle: Oracle
    plan: BatchPlan
    noise: BatchNoiseModel
    correction: Correction
    conditions: list
    x: np.ndarray
    offsets: np.ndarray = field(default=None, repr=False)
    truth: np.ndarray = field(default=None, repr=False)  # oracle(x, c) per grid condition

    @property
    def control_batches(self) -> list[int]:
        return self.plan.control_batches

    def shifts(self) -> np.ndarray:
        return self.noise.scaled_shifts()

    def __call__(self, x, condition: ExperimentCondition) -> np.ndarray:
        return self.batch(x, [condition])[0]

    def batch(self, x, conds: Sequence[ExperimentCondition]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        eta, mode = self.shifts(), self.noise.mode
        v00 = self.control_batches
        inputs = np.stack([_unobserve(x, eta[b], self.offsets[b], mode) for b in v00])
        X = np.repeat(inputs[None], len(conds), axis=0).reshape(-1, len(x))
        rows = [c for c in conds for _ in v00]
        mean_f = self.oracle(X, rows).reshape(len(conds), len(v00), -1).mean(axis=1)
        obs = [_observe(mean_f, eta[b], self.offsets[b], mode) for b in range(len(eta))]
        return np.mean(obs, axis=0)

    def redraw(self, seed: int) -> "FStar":
        fresh = make_batch_noise(self.noise.n_batches, len(self.x), self.noise.scale, seed, self.noise.mode)
        return build_f_star(self.oracle, self.plan, fresh, self.correction, self.conditions, self.x,
                            truth=self.truth)


def _batch_offsets(plan: BatchPlan, cells: Sequence[tuple[int, int]], truth: np.ndarray,
                   eta: np.ndarray, mode: NoiseMode) -> np.ndarray:
    """Batch mean minus grand mean of all observed profiles.

    ``cells[k]`` is the grid cell whose true profile is ``truth[k]``.
    """
    cell_row = {ij: k for k, ij in enumerate(cells)}
    obs = {(i, j, b): _observe(truth[cell_row[(i, j)]], eta[b], 0.0, mode)
           for (i, j, b) in plan.assignment}
    grand = np.mean(list(obs.values()), axis=0)
    off = np.zeros_like(eta)
    for b in range(len(eta)):
        members = [obs[(i, j, b)] for (i, j) in plan.members(b)]
        if members:
            off[b] = np.mean(members, axis=0) - grand
    return off


def build_f_star(oracle: Oracle, plan: BatchPlan, noise: BatchNoiseModel,
                 correction: Correction | str, conditions: Sequence[ExperimentCondition], x,
                 truth: np.ndarray | None = None) -> FStar:
    """Assemble ``F_*`` for the grid ``conditions`` observed from point ``x``."""
    correction = Correction(correction)
    if not plan.control_batches:
        raise NoControlBatch("no batch contains unperturbed cells in baseline media")
    if plan.n_batches != noise.n_batches:
        raise ValueError("plan and noise model disagree on the number of batches")
    x = np.asarray(x, dtype=float)
    conditions = list(conditions)
    index = grid_index(conditions)
    if truth is None:
        truth = oracle(np.repeat(x[None], len(conditions), axis=0), conditions)
    eta = noise.scaled_shifts()
    if correction is Correction.BATCH_MEAN_CENTER:
        offsets = _batch_offsets(plan, [index[c] for c in conditions], truth, eta, noise.mode)
    else:
        offsets = np.zeros_like(eta)
    return FStar(oracle, plan, noise, correction, conditions, x, offsets, truth)


@dataclass
class ErrorReport:
    strategy: str
    epsilon: float
    stderr: float
    per_condition: dict  # (i, j) -> mean over trials of the gene-averaged squared error
    trials: int
    noise_scale: float
    lipschitz: float | None = None

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "epsilon": self.epsilon,
            "stderr": self.stderr,
            "trials": self.trials,
            "noise_scale": self.noise_scale,
            "lipschitz": self.lipschitz,
            "per_condition": [{"i": i, "j": j, "value": v} for (i, j), v in sorted(self.per_condition.items())],
        }


def summary_csv(reports: Sequence[ErrorReport]) -> str:
    return rows_to_csv(["strategy", "epsilon", "stderr", "trials", "noise_scale"],
                       [(r.strategy, r.epsilon, r.stderr, r.trials, r.noise_scale) for r in reports])


def trial_seeds(seed: int, trials: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(trials)]


def estimate_epsilon(f_star: FStar, truth: Oracle | None, conditions: Sequence[ExperimentCondition],
                     trials: int, seed: int, label: str = "") -> ErrorReport:
    """Monte-Carlo estimate of ``eps`` over fresh batch-shift draws.

    Each trial redraws the shifts; the error for a grid condition is the
    gene-averaged squared difference between the true map and ``F_*``, and
    ``eps`` is the mean over the grid. All trials go through the oracle in a
    single batched call. ``truth`` defaults to the estimator's own oracle.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    conditions = list(conditions)
    truth_oracle = truth or f_star.oracle
    x = f_star.x
    n_g = len(x)
    true_vals = truth_oracle(np.repeat(x[None], len(conditions), axis=0), conditions)
    draws = [f_star.redraw(s) for s in trial_seeds(seed, trials)]
    v00 = f_star.control_batches
    mode = f_star.noise.mode
    # rows ordered (trial, condition, control batch)
    inputs = np.stack([
        np.stack([_unobserve(x, d.shifts()[b], d.offsets[b], mode) for b in v00]) for d in draws
    ])  # (trials, |V00|, n_g)
    X = np.broadcast_to(inputs[:, None], (trials, len(conditions), len(v00), n_g)).reshape(-1, n_g)
    rows = [c for _ in draws for c in conditions for _ in v00]
    out = f_star.oracle(X, rows).reshape(trials, len(conditions), len(v00), n_g)
    mean_f = out.mean(axis=2)
    err = np.empty((trials, len(conditions)))
    ratios = []
    for k, d in enumerate(draws):
        eta = d.shifts()
        fs = np.mean([_observe(mean_f[k], eta[b], d.offsets[b], mode) for b in range(len(eta))], axis=0)
        err[k] = np.mean((true_vals - fs) ** 2, axis=1)
        for q, b in enumerate(v00):
            step = np.linalg.norm(inputs[k, q] - x)
            if step > 0:
                ratios.append(np.max(np.linalg.norm(out[k, :, q] - true_vals, axis=1)) / step)
    per_trial = err.mean(axis=1)
    index = grid_index(conditions)
    per_cond = {index[c]: float(v) for c, v in zip(conditions, err.mean(axis=0))}
    stderr = float(per_trial.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return ErrorReport(
        label or "custom",
        float(np.mean(list(per_cond.values()))),
        stderr,
        per_cond,
        trials,
        float(f_star.noise.scale),
        float(max(ratios)) if ratios else None,
    )


@dataclass(frozen=True)
class BatchExperimentConfig:
    spec: GrnSpec
    perturbations: tuple
    medias: tuple
    time: float
    noise_scale: float = 0.1
    n_batches: int | None = None  # None: one per media, as the per-media plan requires
    trials: int = 50
    seed: int = 0
    mode: NoiseMode = NoiseMode.ADDITIVE
    correction: Correction = Correction.NONE
    strategies: tuple = (Strategy.PER_MEDIA, Strategy.RANDOM, Strategy.CONTROL_EVERYWHERE)
    dt: float = 0.01
    x: np.ndarray | None = None  # evaluation point; default the network baseline

    @property
    def conditions(self) -> list[ExperimentCondition]:
        return enumerate_conditions(list(self.perturbations), list(self.medias), self.time)


def compare_strategies(config: BatchExperimentConfig, oracle: Oracle | None = None) -> list[ErrorReport]:
    """Matched-seed comparison of batching strategies, best first.

    Every strategy sees the same batch-shift draws; only the assignment of
    conditions to batches differs.
    """
    oracle = oracle or grn_oracle(config.spec, config.dt)
    conds = config.conditions
    n_b = config.n_batches or len(config.medias) + 1
    x = config.spec.baseline if config.x is None else np.asarray(config.x, dtype=float)
    plan_seed, noise_seed, trial_seed = np.random.SeedSequence(config.seed).generate_state(3)
    truth = oracle(np.repeat(x[None], len(conds), axis=0), conds)
    noise = make_batch_noise(n_b, len(x), config.noise_scale, int(noise_seed), config.mode)
    reports = []
    for strategy in config.strategies:
        strategy = Strategy(strategy)
        plan = make_batch_plan(conds, n_b, strategy, int(plan_seed))
        if not plan.control_batches:
            # a random plan always places the control somewhere; guard anyway
            raise NoControlBatch(f"{strategy.value} plan has no control batch")
        fs = build_f_star(oracle, plan, noise, config.correction, conds, x, truth=truth)
        rep = estimate_epsilon(fs, oracle, conds, config.trials, int(trial_seed), strategy.value)
        reports.append(rep)
    return sorted(reports, key=lambda r: (r.epsilon, r.strategy))


def default_batch_screen():
    """Smooth six-gene grid: four single-gene perturbations, two stimulating medias."""
    from .experiment import PerturbStatus
    from .networks import smooth_screen_network

    spec = smooth_screen_network()
    perts = (
        PerturbationMap.from_dict({0: PerturbStatus.KNOCKOUT}),
        PerturbationMap.from_dict({3: PerturbStatus.KNOCKOUT}),
        PerturbationMap.from_dict({4: PerturbStatus.INTERFERE}),
        PerturbationMap.from_dict({5: PerturbStatus.ACTIVATE}),
    )
    return spec, perts, (MediaCondition(1), MediaCondition(2)), 1.0
