"""Neural ODE response model with exact gradients through unrolled RK4.

The learned map integrates ``dx/ds = G(x, emb_p, emb_m, s)`` from 0 to the
condition's time in ``n_steps`` equal RK4 steps. Gradients are obtained by
reverse-mode differentiation of the discrete scheme itself, so they are the
exact derivatives of the computed loss (no adjoint ODE).

Parameters are plain ``dict[str, np.ndarray]``; the field objects hold only
shapes and hyper-parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import Diverged, NonFiniteOutput, ShapeMismatch
from .experiment import BASELINE, NO_PERTURBATION, ExperimentCondition, MediaCondition, PerturbationMap
from .io import load_arrays, save_arrays
from .losses import LossConfig, PairedDataset, Row, objective_rows

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class IntegratorConfig:
    n_steps: int = 10
    scheme: str = "rk4"

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.scheme != "rk4":
            raise ValueError("only RK4 is implemented")


class MLPField:
    """Tanh MLP on ``[x, emb_p[p], emb_m[m], s]`` returning a velocity.

    Row 0 of each embedding table stands for "no perturbation" / "baseline
    media". With ``autonomous=True`` the time input is held at zero.
    """

    def __init__(self, n_genes: int, n_perturbations: int, n_media: int = 0,
                 hidden: Sequence[int] = (64, 64), embed: tuple[int, int] = (8, 4),
                 autonomous: bool = False):
        self.n_genes = n_genes
        self.n_perturbations = n_perturbations
        self.n_media = n_media
        self.hidden = tuple(hidden)
        self.embed = tuple(embed)
        self.autonomous = autonomous
        self.n_in = n_genes + embed[0] + embed[1] + 1
        self.n_layers = len(self.hidden) + 1

    def describe(self) -> dict:
        return {
            "kind": "mlp",
            "n_genes": self.n_genes,
            "n_perturbations": self.n_perturbations,
            "n_media": self.n_media,
            "hidden": list(self.hidden),
            "embed": list(self.embed),
            "autonomous": self.autonomous,
        }

    def init(self, seed: int, zero_output: bool = True) -> Params:
        rng = np.random.default_rng(seed)
        p: Params = {
            "emb_p": rng.normal(0.0, 1.0, (self.n_perturbations + 1, self.embed[0])),
            "emb_m": rng.normal(0.0, 1.0, (self.n_media + 1, self.embed[1])),
        }
        sizes = (self.n_in,) + self.hidden + (self.n_genes,)
        for k in range(self.n_layers):
            fan_in, fan_out = sizes[k], sizes[k + 1]
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out))
            if k == self.n_layers - 1 and zero_output:
                w = np.zeros_like(w)
            p[f"W{k}"] = w
            p[f"b{k}"] = np.zeros(fan_out)
        return p

    def forward(self, params: Params, x, pidx, midx, s):
        time_col = np.zeros((len(x), 1)) if self.autonomous else s[:, None]
        z = np.concatenate([x, params["emb_p"][pidx], params["emb_m"][midx], time_col], axis=1)
        acts = [z]
        for k in range(self.n_layers - 1):
            z = np.tanh(z @ params[f"W{k}"] + params[f"b{k}"])
            acts.append(z)
        last = self.n_layers - 1
        out = z @ params[f"W{last}"] + params[f"b{last}"]
        return out, (acts, pidx, midx)

    def backward(self, params: Params, cache, cot, grads: Params):
        """Accumulate parameter cotangents into ``grads``; return the state cotangent."""
        acts, pidx, midx = cache
        last = self.n_layers - 1
        grads[f"W{last}"] += acts[-1].T @ cot
        grads[f"b{last}"] += cot.sum(axis=0)
        g = cot @ params[f"W{last}"].T
        for k in range(last - 1, -1, -1):
            g = g * (1.0 - acts[k + 1] ** 2)
            grads[f"W{k}"] += acts[k].T @ g
            grads[f"b{k}"] += g.sum(axis=0)
            g = g @ params[f"W{k}"].T
        n, ep = self.n_genes, self.embed[0]
        np.add.at(grads["emb_p"], pidx, g[:, n:n + ep])
        np.add.at(grads["emb_m"], midx, g[:, n + ep:n + ep + self.embed[1]])
        return g[:, :n]


class LinearDecayField:
    """``G = -(rate_p[p] + rate_m[m]) * x``: closed-form solutions for checks."""

    def __init__(self, n_genes: int, n_perturbations: int, n_media: int = 0):
        self.n_genes = n_genes
        self.n_perturbations = n_perturbations
        self.n_media = n_media

    def describe(self) -> dict:
        return {"kind": "linear", "n_genes": self.n_genes,
                "n_perturbations": self.n_perturbations, "n_media": self.n_media}

    def init(self, seed: int = 0, rate: float = 1.0) -> Params:
        return {
            "rate_p": np.full((self.n_perturbations + 1, self.n_genes), float(rate)),
            "rate_m": np.zeros((self.n_media + 1, self.n_genes)),
        }

    def forward(self, params, x, pidx, midx, s):
        k = params["rate_p"][pidx] + params["rate_m"][midx]
        return -k * x, (x, k, pidx, midx)

    def backward(self, params, cache, cot, grads):
        x, k, pidx, midx = cache
        np.add.at(grads["rate_p"], pidx, -cot * x)
        np.add.at(grads["rate_m"], midx, -cot * x)
        return -k * cot


def field_from_description(desc: dict):
    desc = dict(desc)
    kind = desc.pop("kind")
    if kind == "mlp":
        return MLPField(desc["n_genes"], desc["n_perturbations"], desc["n_media"],
                        tuple(desc["hidden"]), tuple(desc["embed"]), desc["autonomous"])
    if kind == "linear":
        return LinearDecayField(desc["n_genes"], desc["n_perturbations"], desc["n_media"])
    raise ValueError(f"unknown field kind {kind!r}")


def _rk4(fld, params, x, pidx, midx, t0, duration, n_steps, tape=None):
    """Integrate a batch; ``duration`` is per row and may be negative or zero."""
    h = (duration / n_steps)[:, None]
    hv = h[:, 0]
    for k in range(n_steps):
        s = t0 + k * hv
        k1, c1 = fld.forward(params, x, pidx, midx, s)
        k2, c2 = fld.forward(params, x + 0.5 * h * k1, pidx, midx, s + 0.5 * hv)
        k3, c3 = fld.forward(params, x + 0.5 * h * k2, pidx, midx, s + 0.5 * hv)
        k4, c4 = fld.forward(params, x + h * k3, pidx, midx, s + hv)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if tape is not None:
            tape.append((c1, c2, c3, c4))
    return x


def _rk4_backward(fld, params, tape, duration, n_steps, adj, grads):
    h = (duration / n_steps)[:, None]
    for c1, c2, c3, c4 in reversed(tape):
        ck1 = adj * (h / 6.0)
        ck2 = adj * (h / 3.0)
        ck3 = adj * (h / 3.0)
        ck4 = adj * (h / 6.0)
        g4 = fld.backward(params, c4, ck4, grads)
        ck3 = ck3 + h * g4
        g3 = fld.backward(params, c3, ck3, grads)
        ck2 = ck2 + 0.5 * h * g3
        g2 = fld.backward(params, c2, ck2, grads)
        ck1 = ck1 + 0.5 * h * g2
        g1 = fld.backward(params, c1, ck1, grads)
        adj = adj + g1 + g2 + g3 + g4
    return adj


class NeuralODE:
    """Condition-aware neural ODE over a fixed perturbation / media vocabulary."""

    def __init__(self, fld, perturbations: Sequence[PerturbationMap],
                 medias: Sequence[MediaCondition] = (BASELINE,),
                 integ: IntegratorConfig = IntegratorConfig()):
        self.field = fld
        self.perturbations = list(perturbations)
        self.medias = list(medias)
        self.integ = integ
        if not self.perturbations[0].is_none or not self.medias[0].is_baseline:
            raise ValueError("index 0 must be the unperturbed map / baseline media")
        if len(self.perturbations) != fld.n_perturbations + 1 or len(self.medias) != fld.n_media + 1:
            raise ValueError("vocabulary size does not match the field's embedding tables")
        self._pidx = {p: i for i, p in enumerate(self.perturbations)}
        self._midx = {m: j for j, m in enumerate(self.medias)}

    @classmethod
    def for_dataset(cls, data: PairedDataset, fld_factory, integ=IntegratorConfig()) -> "NeuralODE":
        fld = fld_factory(data.n_genes, len(data.perturbations) - 1, len(data.medias) - 1)
        return cls(fld, data.perturbations, data.medias, integ)

    def init(self, seed: int, **kw) -> Params:
        return self.field.init(seed, **kw)

    def indices(self, conds: Sequence[ExperimentCondition]):
        try:
            pidx = np.array([self._pidx[c.perturbation] for c in conds], dtype=np.intp)
            midx = np.array([self._midx[c.media] for c in conds], dtype=np.intp)
        except KeyError as exc:
            raise ValueError(f"condition outside the model vocabulary: {exc}") from None
        return pidx, midx

    def forward_batch(self, params: Params, X, conds: Sequence[ExperimentCondition],
                      integ: IntegratorConfig | None = None, t0=None) -> np.ndarray:
        integ = integ or self.integ
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.field.n_genes:
            raise ShapeMismatch(f"expected {self.field.n_genes} genes, got {X.shape[1]}")
        pidx, midx = self.indices(conds)
        dur = np.array([c.time for c in conds], dtype=float)
        start = np.zeros(len(conds)) if t0 is None else np.broadcast_to(np.asarray(t0, float), dur.shape)
        out = _rk4(self.field, params, X, pidx, midx, start, dur, integ.n_steps)
        if not np.all(np.isfinite(out)):
            raise NonFiniteOutput("neural ODE produced a non-finite state")
        return out

    def forward(self, params: Params, x, condition: ExperimentCondition,
                integ: IntegratorConfig | None = None, t0: float = 0.0) -> np.ndarray:
        """Solution at ``condition.time`` starting from ``x`` at field time ``t0``."""
        if condition.time == 0.0:
            return np.array(x, dtype=float)
        return self.forward_batch(params, [x], [condition], integ, t0)[0]

    def predictor(self, params: Params, integ: IntegratorConfig | None = None):
        return lambda x, cond: self.forward(params, x, cond, integ)

    def counterfactual(self, params: Params, x_t, condition: ExperimentCondition,
                       integ: IntegratorConfig | None = None) -> np.ndarray:
        """Run the unperturbed baseline field backwards to time 0, then forward under ``condition``."""
        integ = integ or self.integ
        t = condition.time
        x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
        if t == 0.0:
            return x_t[0].copy()
        pidx, midx = self.indices([ExperimentCondition(NO_PERTURBATION, BASELINE, t)])
        x0 = _rk4(self.field, params, x_t, pidx, midx, np.array([t]), np.array([-t]), integ.n_steps)
        if not np.all(np.isfinite(x0)):
            raise NonFiniteOutput("reverse integration produced a non-finite state")
        return self.forward_batch(params, x0, [condition], integ)[0]

    # -- objective ----------------------------------------------------------

    def rows_loss_and_gradient(self, params: Params, rows: Sequence[Row],
                               integ: IntegratorConfig | None = None):
        """Weighted sum of per-row MSE and its exact gradient."""
        integ = integ or self.integ
        rows = [r for r in rows if r.weight > 0]
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        if not rows:
            return 0.0, grads
        X = np.stack([r.input for r in rows])
        T = np.stack([r.target for r in rows])
        w = np.array([r.weight for r in rows])[:, None]
        conds = [r.condition for r in rows]
        pidx, midx = self.indices(conds)
        dur = np.array([c.time for c in conds], dtype=float)
        tape = []
        out = _rk4(self.field, params, X, pidx, midx, np.zeros(len(rows)), dur, integ.n_steps, tape)
        resid = out - T
        n_g = X.shape[1]
        loss = float(np.sum(w * resid**2) / n_g)
        if not np.isfinite(loss):
            return loss, grads
        adj = 2.0 * w * resid / n_g
        _rk4_backward(self.field, params, tape, dur, integ.n_steps, adj, grads)
        return loss, grads

    def loss_and_gradient(self, params: Params, data: PairedDataset, config: LossConfig = LossConfig(),
                          integ: IntegratorConfig | None = None):
        rows = objective_rows(data, config)
        if not rows:
            raise ValueError("dataset yields no loss terms")
        return self.rows_loss_and_gradient(params, rows, integ)

    def mean_mse(self, params: Params, pairs, integ: IntegratorConfig | None = None) -> float:
        """Mean over pairs of per-pair MSE (the held-out metric)."""
        pairs = list(pairs)
        if not pairs:
            return float("nan")
        out = self.forward_batch(params, np.stack([p.input for p in pairs]),
                                 [p.condition for p in pairs], integ)
        T = np.stack([p.target for p in pairs])
        return float(np.mean(np.mean((out - T) ** 2, axis=1)))

    def save(self, path, params: Params, meta: dict | None = None) -> None:
        info = {
            "field": self.field.describe(),
            "perturbations": [p.key() for p in self.perturbations],
            "medias": [m.id for m in self.medias],
            "n_steps": self.integ.n_steps,
        }
        info.update(meta or {})
        save_arrays(path, params, info)

    @classmethod
    def load(cls, path) -> tuple["NeuralODE", Params]:
        from .experiment import parse_key

        params, meta = load_arrays(path)
        perts = [parse_key(f"p={k};m=0;t=0.0").perturbation for k in meta["perturbations"]]
        model = cls(field_from_description(meta["field"]), perts,
                    [MediaCondition(m) for m in meta["medias"]], IntegratorConfig(meta["n_steps"]))
        return model, params


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k in sorted(params):
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_adam: float = 1e-8
    epochs: int = 200
    batch_size: int = 0  # 0: full batch
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TrainResult:
    params: Params
    train_loss: np.ndarray  # entry k: objective after k epochs
    test_mse: np.ndarray

    def curves_csv(self) -> str:
        from .io import rows_to_csv

        return rows_to_csv(
            ["epoch", "train_loss", "test_mse"],
            [(k, a, b) for k, (a, b) in enumerate(zip(self.train_loss, self.test_mse))],
        )


def train(model: NeuralODE, data: PairedDataset, split: tuple[Sequence[str], Sequence[str]],
          tconfig: TrainConfig, integ: IntegratorConfig | None = None, params: Params | None = None) -> TrainResult:
    """Adam on the training objective; the test curve is plain mean MSE on held-out pairs."""
    integ = integ or model.integ
    train_keys, test_keys = set(split[0]), set(split[1])
    if train_keys & test_keys:
        raise ValueError("train and test keys overlap")
    all_keys = {p.key for p in data.pairs}
    if (train_keys | test_keys) != all_keys:
        raise ValueError("split must cover the dataset exactly")
    train_data = data.subset(train_keys)
    test_pairs = [p for p in data.pairs if p.key in test_keys]
    rows = [r for r in objective_rows(train_data, tconfig.loss) if r.weight > 0]
    params = model.init(tconfig.seed) if params is None else {k: v.copy() for k, v in params.items()}
    opt = Adam(tconfig.learning_rate, tconfig.beta1, tconfig.beta2, tconfig.epsilon_adam)
    rng = np.random.default_rng(tconfig.seed)
    train_curve, test_curve = [], []
    bs = tconfig.batch_size if 0 < tconfig.batch_size < len(rows) else len(rows)

    def record(loss):
        if not np.isfinite(loss):
            raise Diverged(f"training loss became non-finite at epoch {len(train_curve)}")
        train_curve.append(loss)
        test_curve.append(model.mean_mse(params, test_pairs, integ))

    for epoch in range(tconfig.epochs):
        if bs == len(rows):
            loss, grads = model.rows_loss_and_gradient(params, rows, integ)
            record(loss)
            opt.step(params, grads)
            continue
        record(model.rows_loss_and_gradient(params, rows, integ)[0])
        order = rng.permutation(len(rows))
        for start in range(0, len(rows), bs):
            batch = [rows[i] for i in order[start:start + bs]]
            _, grads = model.rows_loss_and_gradient(params, batch, integ)
            opt.step(params, grads)
    record(model.rows_loss_and_gradient(params, rows, integ)[0])
    return TrainResult(params, np.array(train_curve), np.array(test_curve))
