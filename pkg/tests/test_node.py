import numpy as np
import pytest

from oracles import fd_gradient, gradient_mismatch
from screenode.experiment import BASELINE, NO_PERTURBATION, ExperimentCondition, MediaCondition, PerturbationMap
from screenode.losses import LossConfig, Pair, PairedDataset
from screenode.node import (
    Adam,
    IntegratorConfig,
    LinearDecayField,
    MLPField,
    NeuralODE,
    TrainConfig,
    train,
)

P1 = PerturbationMap.from_dict({0: "ko"})
P2 = PerturbationMap.from_dict({3: "a"})
M1 = MediaCondition(1)


def small_dataset(n_g=6, seed=0):
    """6 genes, 2 perturbations, 1 media; steady and baseline-invariance terms switched on."""
    rng = np.random.default_rng(seed)
    perts, medias = [NO_PERTURBATION, P1, P2], [BASELINE, M1]
    pairs = []
    for p in perts:
        for m in medias:
            for t in (0.5, 1.0):
                pairs.append(Pair(rng.normal(size=n_g), ExperimentCondition(p, m, t), rng.normal(size=n_g)))
    return PairedDataset(pairs, perts, medias, frozenset({(1, 0), (0, 1)}), frozenset({2}))


def mlp_model(data, hidden=(8, 8), n_steps=4):
    return NeuralODE.for_dataset(data, lambda g, p, m: MLPField(g, p, m, hidden=hidden, embed=(3, 2)),
                                 IntegratorConfig(n_steps))


def linear_model(n_g=3, n_p=1, n_m=0, n_steps=100):
    perts = [NO_PERTURBATION, P1][: n_p + 1]
    medias = [BASELINE, M1][: n_m + 1]
    return NeuralODE(LinearDecayField(n_g, n_p, n_m), perts, medias, IntegratorConfig(n_steps))


def test_time_zero_identity():
    data = small_dataset()
    model = mlp_model(data)
    params = model.init(0, zero_output=False)
    x = np.arange(6.0)
    assert np.array_equal(model.forward(params, x, ExperimentCondition(P1, M1, 0.0)), x)


def test_zero_field_identity():
    data = small_dataset()
    model = mlp_model(data)
    params = model.init(0)
    x = np.linspace(-1, 1, 6)
    assert np.array_equal(model.forward(params, x, ExperimentCondition(P2, M1, 3.0)), x)
    assert np.array_equal(model.counterfactual(params, x, ExperimentCondition(P2, M1, 3.0)), x)


def test_linear_field_exponential():
    model = linear_model()
    x = np.array([1.0, 2.0, 0.5])
    out = model.forward(model.init(0), x, ExperimentCondition(time=1.0))
    assert np.max(np.abs(out - x * np.exp(-1.0)) / (x * np.exp(-1.0))) < 1e-6


def test_counterfactual_round_trip_linear():
    model = linear_model(n_steps=200)
    x = np.array([1.0, 2.0, 0.5])
    out = model.counterfactual(model.init(0), x, ExperimentCondition(time=2.0))
    assert np.max(np.abs(out - x)) < 1e-5


def test_counterfactual_two_stage_exponential():
    model = linear_model(n_steps=200)
    params = model.init(0)
    params["rate_p"][1] = [2.0, 0.5, 1.5]
    x = np.array([1.0, 2.0, 0.5])
    t = 1.5
    out = model.counterfactual(params, x, ExperimentCondition(P1, BASELINE, t))
    # back under rate 1 to time 0, then forward under the perturbed rates
    expect = x * np.exp(1.0 * t) * np.exp(-params["rate_p"][1] * t)
    assert np.max(np.abs(out - expect)) < 1e-5


def test_semigroup_consistency():
    data = small_dataset()
    model = mlp_model(data, n_steps=200)
    params = model.init(3, zero_output=False)
    x = np.linspace(0.1, 0.6, 6)
    c = ExperimentCondition(P1, M1, 0.7)
    mid = model.forward(params, x, c)
    two = model.forward(params, mid, c.with_time(0.4), t0=0.7)
    one = model.forward(params, x, c.with_time(1.1), IntegratorConfig(int(200 * 1.1 / 0.7)))
    assert np.max(np.abs(two - one)) < 1e-8


def test_gradient_matches_finite_differences():
    data = small_dataset()
    model = mlp_model(data)
    params = model.init(1, zero_output=False)
    cfg = LossConfig()
    _, grad = model.loss_and_gradient(params, data, cfg)
    numeric = fd_gradient(lambda p: model.loss_and_gradient(p, data, cfg)[0], params)
    assert gradient_mismatch(grad, numeric) == []


def test_gradient_linear_field():
    data = small_dataset(n_g=3)
    model = NeuralODE(LinearDecayField(3, 2, 1), data.perturbations, data.medias, IntegratorConfig(5))
    params = model.init(0)
    params["rate_m"][1] = 0.3
    _, grad = model.loss_and_gradient(params, data)
    numeric = fd_gradient(lambda p: model.loss_and_gradient(p, data)[0], params)
    assert gradient_mismatch(grad, numeric) == []


def test_gradient_vanishes_at_global_minimum():
    data = small_dataset()
    model = mlp_model(data)
    params = model.init(2, zero_output=False)
    pairs = [Pair(p.input, p.condition, model.forward(params, p.input, p.condition)) for p in data.pairs]
    exact = PairedDataset(pairs, data.perturbations, data.medias)
    loss, grad = model.loss_and_gradient(params, exact)
    assert loss < 1e-20
    assert np.sqrt(sum(np.sum(g**2) for g in grad.values())) < 1e-8


def test_gradient_deterministic():
    data = small_dataset()
    model = mlp_model(data)
    params = model.init(1, zero_output=False)
    g1 = model.loss_and_gradient(params, data)[1]
    g2 = model.loss_and_gradient(params, data)[1]
    assert all(g1[k].tobytes() == g2[k].tobytes() for k in g1)


def test_adam_single_step():
    p = {"w": np.array([1.0, -2.0])}
    Adam(lr=0.1).step(p, {"w": np.array([0.5, -3.0])})
    # first bias-corrected step moves each coordinate by lr * sign(g)
    assert np.allclose(p["w"], [0.9, -1.9], atol=1e-7)


def split_of(data):
    keys = [p.key for p in data.pairs]
    test = [p.key for p in data.pairs if p.condition.perturbation == P2 and p.condition.time == 1.0]
    return [k for k in keys if k not in test], test


def test_training_deterministic_and_decreasing():
    data = small_dataset()
    model = mlp_model(data)
    cfg = TrainConfig(learning_rate=1e-2, epochs=30, seed=4)
    a = train(model, data, split_of(data), cfg)
    b = train(model, data, split_of(data), cfg)
    assert a.curves_csv() == b.curves_csv()
    assert a.train_loss[-1] < a.train_loss[0]
    assert a.curves_csv().startswith("epoch,train_loss,test_mse\n")
    assert len(a.train_loss) == cfg.epochs + 1


def test_minibatch_training_runs():
    data = small_dataset()
    res = train(mlp_model(data), data, split_of(data), TrainConfig(epochs=3, batch_size=4, seed=1))
    assert np.all(np.isfinite(res.test_mse))


def test_split_validation():
    data = small_dataset()
    keys = [p.key for p in data.pairs]
    with pytest.raises(ValueError):
        train(mlp_model(data), data, (keys, keys[:1]), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(mlp_model(data), data, (keys[1:], []), TrainConfig(epochs=1))


def test_test_metric_excludes_regularizers():
    data = small_dataset()
    model = mlp_model(data)
    train_keys, test_keys = split_of(data)
    res = train(model, data, (train_keys, test_keys), TrainConfig(epochs=2, seed=0))
    test_pairs = [p for p in data.pairs if p.key in set(test_keys)]
    assert res.test_mse[-1] == pytest.approx(model.mean_mse(res.params, test_pairs))


def test_checkpoint_round_trip(tmp_path):
    data = small_dataset()
    model = mlp_model(data)
    params = model.init(5, zero_output=False)
    model.save(tmp_path / "ck.npz", params)
    back, bp = NeuralODE.load(tmp_path / "ck.npz")
    x = np.ones(6)
    c = ExperimentCondition(P2, M1, 1.0)
    assert np.array_equal(model.forward(params, x, c), back.forward(bp, x, c))


def test_unknown_condition_rejected():
    data = small_dataset()
    model = mlp_model(data)
    with pytest.raises(ValueError):
        model.forward(model.init(0), np.ones(6), ExperimentCondition(PerturbationMap.from_dict({5: "i"}), time=1.0))
