"""Small hand-built networks with known qualitative behaviour."""
from __future__ import annotations

import numpy as np

from .grn import Differentiation, GrnSpec

RECEPTOR, TRANSDUCER, EFFECTOR = 0, 1, 2
CYTOKINE = 1


def receptor_cascade() -> GrnSpec:
    """Receptor -> transducer -> bistable effector, stimulated by media 1.

    The transducer fires only when receptor and cytokine are both present. The
    effector has strong self-activation, so once switched on it stays on even
    if the receptor is knocked out afterwards.
    """
    interaction = np.array(
        [
            [0.0, 0.0, 0.0],
            [24.0, 0.0, 0.0],
            [0.0, 6.0, 10.0],
        ]
    )
    return GrnSpec.from_baseline(
        interaction,
        baseline=[0.5, 0.001, 0.02],
        degradation=[5.0, 1.0, 1.0],
        max_rate=[5.0, 1.0, 1.0],
        media_input={CYTOKINE: [0.0, 12.0, 0.0]},
    )


def feedback_oscillator() -> GrnSpec:
    """Excitatory/inhibitory pair: quiet in baseline media, limit cycle in media 1."""
    a_e, a_i = 1.3, 2.0
    interaction = np.array([[16 * a_e, -12 * a_e], [15 * a_i, -3 * a_i]])
    basal = np.array([-4.0 * a_e, -3.7 * a_i])
    degradation = np.array([1.0, 0.5])
    # baseline fixed point of the unstimulated pair, refined by Newton steps
    x = np.array([0.006, 0.0007])
    for _ in range(50):
        u = interaction @ x + basal
        s = 1.0 / (1.0 + np.exp(-u))
        f = degradation * s - degradation * x
        jac = (degradation * s * (1 - s))[:, None] * interaction - np.diag(degradation)
        x = x - np.linalg.solve(jac, f)
    return GrnSpec.from_baseline(
        interaction,
        baseline=x,
        degradation=degradation,
        max_rate=degradation,
        media_input={1: [1.25 * a_e, 0.0]},
    )


def leaf_knockout_network(n_genes: int = 6, seed: int = 3) -> GrnSpec:
    """Random stable network whose last gene regulates nothing."""
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.6, size=(n_genes, n_genes))
    w[:, -1] = 0.0
    np.fill_diagonal(w, 0.0)
    degradation = rng.uniform(0.8, 2.0, n_genes)
    baseline = rng.uniform(0.3, 0.9, n_genes)
    return GrnSpec.from_baseline(w, baseline, degradation, max_rate=2.0 * degradation)


def differentiating_network(n_genes: int = 8, jitter: float = 0.05) -> GrnSpec:
    """Gene 0 drives a progression that raises genes 4..7."""
    block = tuple(range(4, n_genes))
    shift = np.linspace(2.0, 0.8, len(block))
    degradation = np.ones(n_genes)
    return GrnSpec.from_baseline(
        np.zeros((n_genes, n_genes)),
        baseline=np.full(n_genes, 0.5),
        degradation=degradation,
        max_rate=2.0 * degradation,
        differentiation=Differentiation(block, shift, rate=0.5, driver=0, jitter=jitter),
    )


def smooth_screen_network(n_genes: int = 6, seed: int = 11) -> GrnSpec:
    """Weakly coupled network with O(1) expression and two stimulating medias.

    States stay well away from zero, so small additive measurement shifts act
    as smooth perturbations of the input.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.5, size=(n_genes, n_genes))
    np.fill_diagonal(w, 0.0)
    degradation = rng.uniform(0.8, 1.5, n_genes)
    baseline = rng.uniform(0.8, 1.6, n_genes)
    media = {1: np.zeros(n_genes), 2: np.zeros(n_genes)}
    media[1][:2] = 1.0
    media[2][2] = -1.0
    return GrnSpec.from_baseline(w, baseline, degradation, max_rate=2.0 * degradation, media_input=media)
