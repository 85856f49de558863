"""Pseudotime for a single, unbranched trajectory.

Control cells are ordered along their first principal axis and their ranks
spread evenly over ``(0, t)``. Perturbed cells take the pseudotime of their
nearest control cell. Earlier control cells are then paired with later
perturbed cells to give training pairs for a trajectory map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .errors import DegenerateCloud, EmptyPairing
from .experiment import BASELINE, NO_PERTURBATION, ExperimentCondition, MediaCondition, PerturbationMap
from .io import rows_to_csv
from .losses import Pair, PairedDataset

CONTROL, PERTURBED = "control", "perturbed"


@dataclass
class PseudotimeAssignment:
    sigma: np.ndarray
    population: str
    t: float
    neighbor: np.ndarray | None = None  # nearest control index, perturbed cells only

    def __len__(self) -> int:
        return len(self.sigma)

    def to_csv(self, offset: int = 0, header: bool = True) -> str:
        rows = []
        for k, s in enumerate(self.sigma):
            nb = "" if self.neighbor is None else str(int(self.neighbor[k]))
            rows.append((offset + k, self.population, float(s), nb))
        text = rows_to_csv(["cell_id", "population", "sigma", "neighbor_id"], rows)
        return text if header else text.split("\n", 1)[1]


def principal_axis(cells: np.ndarray) -> np.ndarray:
    """Unit first principal direction of the centred cloud."""
    centred = cells - cells.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    return vt[0]


def order_controls(cells, t: float, start=None) -> PseudotimeAssignment:
    """Rank controls along the first principal axis and rescale ranks to (0, t).

    The axis is oriented so the cell nearest ``start`` gets the lowest score.
    Without a start state the largest-magnitude loading is made positive, a
    convention that does not depend on the input order. Tied scores share
    their average rank.
    """
    cells = np.atleast_2d(np.asarray(cells, dtype=float))
    n = len(cells)
    if n < 2:
        raise ValueError("need at least two control cells")
    if not t > 0:
        raise ValueError("t must be positive")
    if np.all(np.ptp(cells, axis=0) == 0):
        raise DegenerateCloud("all control cells are identical")
    axis = principal_axis(cells)
    score = (cells - cells.mean(axis=0)) @ axis
    if start is not None:
        d = np.linalg.norm(cells - np.asarray(start, dtype=float), axis=1)
        nearest = int(np.argmin(d))
        if score[nearest] > np.median(score):
            score = -score
    elif axis[np.argmax(np.abs(axis))] < 0:
        score = -score
    ranks = rankdata(score, method="average")
    return PseudotimeAssignment(t * ranks / (n + 1), CONTROL, float(t))


def assign_perturbed(controls: PseudotimeAssignment, control_cells, perturbed) -> PseudotimeAssignment:
    """Each perturbed cell takes the pseudotime of its Euclidean nearest control.

    Ties go to the lowest control index.
    """
    control_cells = np.atleast_2d(np.asarray(control_cells, dtype=float))
    perturbed = np.atleast_2d(np.asarray(perturbed, dtype=float))
    if len(control_cells) == 0:
        raise ValueError("need at least one control cell")
    if len(control_cells) != len(controls):
        raise ValueError("control profiles and assignment differ in length")
    nearest = np.argmin(cdist(perturbed, control_cells), axis=1)  # first minimum wins
    return PseudotimeAssignment(controls.sigma[nearest].copy(), PERTURBED, controls.t, nearest)


def trajectory_pair_indices(sigma_c, sigma_p, stride: int = 1) -> list[tuple[int, int]]:
    """(control, perturbed) index pairs with sigma_c < sigma_p.

    ``stride`` keeps every stride-th cell of each population in pseudotime
    order before pairing.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    oc = np.argsort(sigma_c, kind="stable")[::stride]
    op = np.argsort(sigma_p, kind="stable")[::stride]
    return [(int(c), int(p)) for c in oc for p in op if sigma_c[c] < sigma_p[p]]


def build_trajectory_pairs(control_cells, perturbed_cells, controls: PseudotimeAssignment,
                           perturbed: PseudotimeAssignment, perturbation: PerturbationMap,
                           media: MediaCondition = BASELINE, stride: int = 1) -> PairedDataset:
    """Pairs (control at s, perturbation with time s' - s, perturbed cell at s')."""
    control_cells = np.atleast_2d(np.asarray(control_cells, dtype=float))
    perturbed_cells = np.atleast_2d(np.asarray(perturbed_cells, dtype=float))
    if len(controls) != len(control_cells) or len(perturbed) != len(perturbed_cells):
        raise ValueError("assignments must cover every cell")
    idx = trajectory_pair_indices(controls.sigma, perturbed.sigma, stride)
    if not idx:
        raise EmptyPairing("no control cell precedes any perturbed cell in pseudotime")
    pairs = [
        Pair(control_cells[c],
             ExperimentCondition(perturbation, media, float(perturbed.sigma[p] - controls.sigma[c])),
             perturbed_cells[p])
        for c, p in idx
    ]
    perts = [NO_PERTURBATION] + ([] if perturbation.is_none else [perturbation])
    medias = [BASELINE] + ([] if media.is_baseline else [media])
    return PairedDataset(pairs, perts, medias)
