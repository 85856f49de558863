"""Steady-state detection from time-course pseudobulk.

For each perturbation the mean absolute log2 fold change between consecutive
days is compared against a noise band built by splitting the non-targeting
control cells in half.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingDay, TooFewCells
from .io import rows_to_csv
from .measurement import pseudobulk


@dataclass
class TimeSeriesDataset:
    """Pseudobulk profiles and raw counts keyed by ``(perturbation index, day)``.

    Profiles are linear-scale normalised means; ``target_sum`` is the shared
    per-cell normalisation total so that split halves are comparable. When
    ``genes`` is set, cells keep all genes (library sizes use every gene) and
    profiles are restricted to those columns after normalising.
    """

    days: list
    profiles: dict
    cells: dict = field(default_factory=dict)
    control: int = 0
    target_sum: float | None = None
    genes: np.ndarray | None = None

    def __post_init__(self):
        self.days = sorted(self.days)
        if len(self.days) < 2:
            raise ValueError("need at least two days")

    @property
    def perturbations(self) -> list[int]:
        return sorted({p for p, _ in self.profiles})

    def profile(self, pert: int, day) -> np.ndarray:
        try:
            return self.profiles[(pert, day)]
        except KeyError:
            raise MissingDay(f"no profile for perturbation {pert} on day {day}") from None

    @classmethod
    def from_cells(cls, days, cells: dict, control: int = 0, target_sum: float | None = None):
        if target_sum is None:
            totals = np.concatenate([np.asarray(c).sum(axis=1) for c in cells.values()])
            target_sum = float(np.median(totals))
        profiles = {k: pseudobulk(v, target_sum, log=False) for k, v in cells.items()}
        return cls(list(days), profiles, dict(cells), control, target_sum)

    def restrict(self, genes) -> "TimeSeriesDataset":
        genes = np.asarray(genes, dtype=np.intp)
        base = np.arange(len(next(iter(self.profiles.values())))) if self.genes is None else self.genes
        profiles = {k: v[genes] for k, v in self.profiles.items()}
        return TimeSeriesDataset(list(self.days), profiles, self.cells, self.control, self.target_sum, base[genes])

    def group_profile(self, cells) -> np.ndarray:
        prof = pseudobulk(cells, self.target_sum, log=False)
        return prof if self.genes is None else prof[self.genes]


def _mean_abs_lfc(a, b, pseudocount: float) -> float:
    return float(np.mean(np.abs(np.log2((b + pseudocount) / (a + pseudocount)))))


def lfc_series(data: TimeSeriesDataset, perturbation: int, pseudocount: float = 1.0) -> np.ndarray:
    """Mean |log2 FC| between each pair of consecutive days."""
    if not pseudocount > 0:
        raise ValueError("pseudocount must be positive")
    profs = [data.profile(perturbation, d) for d in data.days]
    return np.array([_mean_abs_lfc(a, b, pseudocount) for a, b in zip(profs, profs[1:])])


def baseline_band(data: TimeSeriesDataset, repeats: int = 5, seed: int = 0,
                  pseudocount: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Noise band per day pair from random halves of the control cells.

    Each repeat splits every day's control cells into two halves and compares
    half A of day k with half B of day k+1. Returns the mean and standard
    deviation over repeats.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rng = np.random.default_rng(seed)
    ctrl = []
    for d in data.days:
        cells = data.cells.get((data.control, d))
        if cells is None or len(cells) < 2:
            raise TooFewCells(f"need >= 2 control cells on day {d}")
        ctrl.append(np.asarray(cells))
    vals = np.empty((repeats, len(data.days) - 1))
    for r in range(repeats):
        halves = []
        for cells in ctrl:
            perm = rng.permutation(len(cells))
            half = len(cells) // 2
            halves.append((data.group_profile(cells[perm[:half]]), data.group_profile(cells[perm[half:]])))
        for k in range(len(data.days) - 1):
            vals[r, k] = _mean_abs_lfc(halves[k][0], halves[k + 1][1], pseudocount)
    return vals.mean(axis=0), vals.std(axis=0)


def detect_steady(data: TimeSeriesDataset, margin: float = 2.0, repeats: int = 5, seed: int = 0,
                  pseudocount: float = 1.0, band=None) -> list[int]:
    """Perturbations whose last day-to-day change sits inside the control band.

    A perturbation qualifies when its final mean |LFC| is at most
    ``band_mean + margin * band_sd`` and the series does not rise over the last
    two comparisons by more than ``margin * band_sd``. The rise check is
    skipped when the final value is already at or below the band mean, where
    day-to-day differences are pure sampling noise.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    mean, sd = baseline_band(data, repeats, seed, pseudocount) if band is None else band
    slack = margin * sd[-1] if np.isfinite(margin) else np.inf
    out = []
    for p in data.perturbations:
        series = lfc_series(data, p, pseudocount)
        ok = series[-1] <= mean[-1] + slack
        if len(series) >= 2 and series[-1] > mean[-1]:
            ok = ok and series[-1] <= series[-2] + slack
        if ok:
            out.append(p)
    return out


def lfc_table_csv(data: TimeSeriesDataset, band, pseudocount: float = 1.0) -> str:
    mean, sd = band
    rows = []
    for p in data.perturbations:
        series = lfc_series(data, p, pseudocount)
        for k, v in enumerate(series):
            rows.append((p, f"{data.days[k]}-{data.days[k + 1]}", v, mean[k], sd[k]))
    return rows_to_csv(["perturbation", "day_pair", "lfc", "baseline_mean", "baseline_sd"], rows)


def select_variable_genes(profiles: dict, days, k: int = 120) -> np.ndarray:
    """Indices of the ``k`` genes whose profiles vary most over the time course.

    Variance is taken across days within each perturbation and averaged over
    perturbations; ties keep the lower gene index. Returned indices are sorted.
    """
    perts = sorted({p for p, _ in profiles})
    stacked = np.stack([np.stack([profiles[(p, d)] for d in sorted(days)]) for p in perts])
    score = stacked.var(axis=1).mean(axis=0)
    if k >= len(score):
        return np.arange(len(score))
    order = np.argsort(-score, kind="stable")
    return np.sort(order[:k])
