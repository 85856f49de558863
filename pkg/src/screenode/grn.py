"""Ground-truth gene-regulatory ODE used as the synthetic screen oracle.

Dynamics per gene ``g``::

    dx_g/dt = mult_g * max_rate_g * sigmoid(gain * u_g) - degradation_g * x_g
    u = interaction @ x + basal + media_input[m]

``mult`` encodes the perturbation (0 knockout, ``interfere_factor``,
``activate_factor``, 1 otherwise). States are clamped at zero after every
RK4 step. The basal term is normally solved from a designated baseline state
so that unperturbed cells in baseline media sit exactly on a fixed point.
"""
from __future__ import annotations

import enum
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import NonFiniteState, NotDifferentiating
from .experiment import (
    NO_PERTURBATION,
    ExperimentCondition,
    MediaCondition,
    PerturbationMap,
    PerturbStatus,
)

DEFAULT_INTERFERE = 0.2
DEFAULT_ACTIVATE = 3.0


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def _logit(p):
    return np.log(p) - np.log1p(-p)


@dataclass
class Differentiation:
    """Scripted 1-D progression that shifts a block of genes.

    A cell at latent time ``tau`` has block gene ``g`` at
    ``baseline_g + shift_g * (1 - exp(-rate * tau))``. Perturbing ``driver``
    scales the progression by the driver's production multiplier, so a driver
    knockout holds cells at the start state.
    """

    block: tuple[int, ...]
    shift: np.ndarray
    rate: float = 0.5
    driver: int | None = None
    jitter: float = 0.05

    def __post_init__(self):
        self.block = tuple(int(g) for g in self.block)
        self.shift = np.asarray(self.shift, dtype=float)
        if self.shift.shape != (len(self.block),):
            raise ValueError("shift must have one entry per block gene")

    def progress(self, tau):
        return 1.0 - np.exp(-self.rate * np.asarray(tau, dtype=float))

    def to_json(self) -> dict:
        return {
            "block": list(self.block),
            "shift": self.shift.tolist(),
            "rate": self.rate,
            "driver": self.driver,
            "jitter": self.jitter,
        }


@dataclass
class GrnSpec:
    interaction: np.ndarray
    basal: np.ndarray
    degradation: np.ndarray
    max_rate: np.ndarray
    baseline: np.ndarray
    media_input: dict[int, np.ndarray] = field(default_factory=dict)
    gain: float = 1.0
    activation: str = "sigmoid"
    interfere_factor: float = DEFAULT_INTERFERE
    activate_factor: float = DEFAULT_ACTIVATE
    differentiation: Differentiation | None = None

    def __post_init__(self):
        self.interaction = np.asarray(self.interaction, dtype=float)
        n = self.interaction.shape[0]
        if self.interaction.shape != (n, n):
            raise ValueError("interaction must be square")
        self.basal = np.asarray(self.basal, dtype=float).reshape(n)
        self.degradation = np.asarray(self.degradation, dtype=float).reshape(n)
        self.max_rate = np.asarray(self.max_rate, dtype=float).reshape(n)
        self.baseline = np.asarray(self.baseline, dtype=float).reshape(n)
        if np.any(self.degradation <= 0):
            raise ValueError("degradation rates must be positive")
        if np.any(self.baseline < 0):
            raise ValueError("baseline state must be non-negative")
        if self.activation != "sigmoid":
            raise ValueError(f"unsupported activation {self.activation!r}")
        media = {0: np.zeros(n)}
        for k, v in self.media_input.items():
            media[int(k)] = np.asarray(v, dtype=float).reshape(n)
        if np.any(media[0] != 0):
            raise ValueError("baseline media input must be zero")
        self.media_input = media
        # regulators only; skipping all-zero columns makes sparse wiring cheap
        self._cols = np.flatnonzero(np.any(self.interaction != 0, axis=0))
        self._w_active = self.interaction[:, self._cols].T.copy()

    @property
    def n_genes(self) -> int:
        return self.interaction.shape[0]

    @classmethod
    def from_baseline(
        cls,
        interaction,
        baseline,
        degradation,
        max_rate=None,
        media_input=None,
        gain: float = 1.0,
        **kw,
    ) -> "GrnSpec":
        """Solve ``basal`` so that ``baseline`` is a fixed point in baseline media."""
        interaction = np.asarray(interaction, dtype=float)
        baseline = np.asarray(baseline, dtype=float)
        degradation = np.asarray(degradation, dtype=float)
        max_rate = degradation.copy() if max_rate is None else np.asarray(max_rate, dtype=float)
        frac = degradation * baseline / max_rate
        if np.any(frac <= 0) or np.any(frac >= 1):
            raise ValueError("baseline must satisfy 0 < degradation*x/max_rate < 1 for every gene")
        basal = _logit(frac) / gain - interaction @ baseline
        return cls(interaction, basal, degradation, max_rate, baseline, media_input or {}, gain, **kw)

    # -- dynamics ---------------------------------------------------------

    def multipliers(self, pmap: PerturbationMap) -> np.ndarray:
        mult = np.ones(self.n_genes)
        for g, s in pmap.entries:
            if not 0 <= g < self.n_genes:
                raise ValueError(f"gene {g} outside [0, {self.n_genes})")
            if s is PerturbStatus.KNOCKOUT:
                mult[g] = 0.0
            elif s is PerturbStatus.INTERFERE:
                mult[g] = self.interfere_factor
            elif s is PerturbStatus.ACTIVATE:
                mult[g] = self.activate_factor
        return mult

    def media_vector(self, media: MediaCondition | int) -> np.ndarray:
        mid = media.id if isinstance(media, MediaCondition) else int(media)
        try:
            return self.media_input[mid]
        except KeyError:
            raise ValueError(f"media {mid} not defined for this network") from None

    def rhs(self, x, mult, media_vec):
        u = x[..., self._cols] @ self._w_active + self.basal + media_vec
        return mult * self.max_rate * _sigmoid(self.gain * u) - self.degradation * x

    def velocity(self, x, condition: ExperimentCondition) -> np.ndarray:
        return self.rhs(
            np.asarray(x, dtype=float),
            self.multipliers(condition.perturbation),
            self.media_vector(condition.media),
        )

    # -- serialization ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "n_genes": self.n_genes,
            "interaction": self.interaction.tolist(),
            "basal": self.basal.tolist(),
            "degradation": self.degradation.tolist(),
            "max_rate": self.max_rate.tolist(),
            "baseline": self.baseline.tolist(),
            "media_input": {str(k): v.tolist() for k, v in self.media_input.items() if k != 0},
            "activation": {"kind": self.activation, "gain": self.gain},
            "interfere_factor": self.interfere_factor,
            "activate_factor": self.activate_factor,
            "differentiation": None if self.differentiation is None else self.differentiation.to_json(),
        }

    @classmethod
    def from_json(cls, rec: Mapping) -> "GrnSpec":
        from .io import validate_grn_json

        validate_grn_json(rec)
        act = rec.get("activation", {"kind": "sigmoid", "gain": 1.0})
        diff = rec.get("differentiation")
        media = {int(k): v for k, v in rec.get("media_input", {}).items()}
        common = dict(
            media_input=media,
            gain=float(act.get("gain", 1.0)),
            interfere_factor=float(rec.get("interfere_factor", DEFAULT_INTERFERE)),
            activate_factor=float(rec.get("activate_factor", DEFAULT_ACTIVATE)),
            differentiation=None if diff is None else Differentiation(**diff),
        )
        if act.get("kind", "sigmoid") != "sigmoid":
            raise ValueError(f"unsupported activation {act.get('kind')!r}")
        if rec.get("basal") is None:
            return cls.from_baseline(
                rec["interaction"], rec["baseline"], rec["degradation"], rec.get("max_rate"), **common
            )
        return cls(
            rec["interaction"],
            rec["basal"],
            rec["degradation"],
            rec.get("max_rate", rec["degradation"]),
            rec["baseline"],
            **common,
        )

    @classmethod
    def load(cls, path) -> "GrnSpec":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), n_genes)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self) -> str:
        n = self.states.shape[1]
        buf = io.StringIO()
        buf.write(",".join(["time"] + [f"g{i}" for i in range(n)]) + "\n")
        for t, row in zip(self.times, self.states):
            buf.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")
        return buf.getvalue()


def _step_sizes(t: float, dt: float) -> np.ndarray:
    """Equal steps of ``dt`` with a shorter final step landing exactly on ``t``."""
    if t == 0.0:
        return np.zeros(0)
    n = max(1, math.ceil(t / dt - 1e-9))
    steps = np.full(n, dt)
    steps[-1] = t - dt * (n - 1)
    return steps


def integrate(spec: GrnSpec, x0, mult, media_vec, t: float, dt: float, record: bool = False):
    """RK4 with clamp-at-zero on an array of states (``x0`` may be 2-D).

    Returns the final state, or ``(times, states)`` when ``record`` is set.
    """
    x = np.array(x0, dtype=float)
    times = [0.0]
    states = [x.copy()] if record else None
    f = spec.rhs
    elapsed = 0.0
    for h in _step_sizes(float(t), float(dt)):
        k1 = f(x, mult, media_vec)
        k2 = f(x + 0.5 * h * k1, mult, media_vec)
        k3 = f(x + 0.5 * h * k2, mult, media_vec)
        k4 = f(x + h * k3, mult, media_vec)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        np.maximum(x, 0.0, out=x)
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"non-finite state at t={elapsed + h}")
        elapsed += h
        if record:
            times.append(elapsed)
            states.append(x.copy())
    if record:
        times[-1] = float(t) if len(times) > 1 else 0.0
        return np.array(times), np.array(states)
    return x


def simulate(spec: GrnSpec, x0, condition: ExperimentCondition, dt: float) -> Trajectory:
    """Perturb at t=0, apply media, then integrate over (0, condition.time]."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.n_genes,):
        raise ValueError(f"x0 must have shape ({spec.n_genes},)")
    if np.any(x0 < 0):
        raise ValueError("x0 must be non-negative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    times, states = integrate(
        spec,
        x0,
        spec.multipliers(condition.perturbation),
        spec.media_vector(condition.media),
        condition.time,
        dt,
        record=True,
    )
    return Trajectory(times, states)


def simulate_final(spec: GrnSpec, x0, condition: ExperimentCondition, dt: float) -> np.ndarray:
    """Final state only; ``x0`` may be a stack of states ``(n, n_genes)``."""
    return integrate(
        spec,
        np.maximum(np.asarray(x0, dtype=float), 0.0),
        spec.multipliers(condition.perturbation),
        spec.media_vector(condition.media),
        condition.time,
        dt,
    )


def steady_state(
    spec: GrnSpec,
    condition: ExperimentCondition,
    horizon: float,
    tol: float,
    dt: float = 0.01,
) -> tuple[np.ndarray, bool]:
    """Integrate from the baseline state to ``horizon``; converged iff max |dx/dt| < tol."""
    if horizon <= 0 or tol <= 0:
        raise ValueError("horizon and tol must be positive")
    cond = condition.with_time(horizon)
    x = simulate_final(spec, spec.baseline, cond, dt)
    speed = np.max(np.abs(spec.velocity(x, cond)))
    return x, bool(speed < tol)


class Order(enum.Enum):
    PERTURB_FIRST = "perturb_first"
    MEDIA_FIRST = "media_first"


def order_experiment(
    spec: GrnSpec,
    x0,
    perturbation: PerturbationMap,
    media: MediaCondition,
    t_pre: float,
    t_post: float,
    order: Order,
    dt: float = 0.01,
) -> np.ndarray:
    """Compare perturb-then-stimulate against stimulate-then-perturb.

    Both orders run for ``t_pre + t_post`` in total; they differ only in when
    the perturbation lands (time 0 versus time ``t_pre``).
    """
    if t_pre < 0 or t_post < 0:
        raise ValueError("waiting times must be non-negative")
    if order is Order.PERTURB_FIRST:
        x = simulate_final(spec, x0, ExperimentCondition(perturbation, media, t_pre), dt)
        return simulate_final(spec, x, ExperimentCondition(perturbation, media, t_post), dt)
    x = simulate_final(spec, x0, ExperimentCondition(NO_PERTURBATION, media, t_pre), dt)
    return simulate_final(spec, x, ExperimentCondition(perturbation, media, t_post), dt)


def lognormal_jitter(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    """Mean-one multiplicative log-normal factors."""
    if sigma == 0:
        return np.ones(shape)
    return np.exp(sigma * rng.standard_normal(shape) - 0.5 * sigma**2)


def sample_population(
    spec: GrnSpec,
    condition: ExperimentCondition,
    n_cells: int,
    jitter: float,
    seed: int,
    dt: float = 0.01,
) -> np.ndarray:
    """Jitter the baseline state per cell, simulate each, return ``(n_cells, n_genes)``."""
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    rng = np.random.default_rng(seed)
    x0 = spec.baseline * lognormal_jitter(rng, (n_cells, spec.n_genes), jitter)
    return simulate_final(spec, x0, condition, dt)


def differentiate(
    spec: GrnSpec,
    n_cells: int,
    t: float,
    seed: int,
    perturbation: PerturbationMap = NO_PERTURBATION,
    jitter: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Cells spread along the scripted progression up to latent time ``t``.

    Returns ``(states, latent_time)``.
    """
    mode = spec.differentiation
    if mode is None:
        raise NotDifferentiating("network has no differentiation mode")
    sigma = mode.jitter if jitter is None else jitter
    rng = np.random.default_rng(seed)
    tau = rng.uniform(0.0, t, size=n_cells)
    speed = 1.0 if mode.driver is None else spec.multipliers(perturbation)[mode.driver]
    states = np.tile(spec.baseline, (n_cells, 1))
    block = list(mode.block)
    states[:, block] += np.outer(mode.progress(tau) * min(speed, 1.0), mode.shift)
    states = np.maximum(states, 0.0) * lognormal_jitter(rng, states.shape, sigma)
    return states, tau


def population_csv(states: np.ndarray, latent_time) -> str:
    states = np.atleast_2d(states)
    latent = np.broadcast_to(np.asarray(latent_time, dtype=float), (states.shape[0],))
    buf = io.StringIO()
    buf.write(",".join(["cell_id", "latent_time"] + [f"g{i}" for i in range(states.shape[1])]) + "\n")
    for i, (lt, row) in enumerate(zip(latent, states)):
        buf.write(",".join([str(i), repr(float(lt))] + [repr(float(v)) for v in row]) + "\n")
    return buf.getvalue()
