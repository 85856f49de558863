import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import energy_distance_bruteforce
from screenode.errors import EmptySet, MissingRow, MissingSteadyTarget, ShapeMismatch
from screenode.experiment import (
    BASELINE,
    NO_PERTURBATION,
    ExperimentCondition,
    MediaCondition,
    PerturbationMap,
    enumerate_conditions,
)
from screenode.losses import (
    LossConfig,
    Pair,
    PairedDataset,
    assumption2_terms,
    distribution_loss,
    energy_distance,
    final_time_split,
    full_breakdown,
    moment_mse,
    random_match,
    standardized,
    steady_state_terms,
    total_loss,
)


def full_grid(n_p, n_m, n_g=3, seed=0, t=1.0):
    rng = np.random.default_rng(seed)
    perts = [PerturbationMap.from_dict({g: "ko"}) for g in range(n_p)]
    medias = [MediaCondition(j + 1) for j in range(n_m)]
    conds = enumerate_conditions(perts, medias, t)
    pairs = [Pair(rng.normal(size=n_g), c, rng.normal(size=n_g)) for c in conds]
    return PairedDataset(pairs, [NO_PERTURBATION] + perts, [BASELINE] + medias)


def exact(data):
    table = {p.key: p.target for p in data.pairs}
    return lambda x, c: table[c.key()]


def test_exact_predictor_zero_loss():
    data = full_grid(2, 1)
    out = total_loss(exact(data), data)
    assert out.total == 0 and all(v["value"] == 0 for v in out.terms.values())


def test_path_counts_full_grid():
    out = total_loss(lambda x, c: x, full_grid(2, 1))
    assert [out.terms[f"path{k}"]["count"] for k in (1, 2, 3, 4)] == [2, 2, 1, 1]


def test_zero_predictor_hand_sum():
    c1 = ExperimentCondition(PerturbationMap.from_dict({0: "ko"}), BASELINE, 1.0)
    data = PairedDataset([
        Pair([1.0, 2.0], ExperimentCondition(time=1.0), [3.0, 4.0]),
        Pair([0.0, 0.0], c1, [1.0, -1.0]),
    ], [NO_PERTURBATION, c1.perturbation])
    out = total_loss(lambda x, c: np.zeros(2), data)
    assert out.total == pytest.approx((9 + 16) / 2 + (1 + 1) / 2, abs=1e-15)


def test_shape_mismatch():
    data = PairedDataset([Pair([1.0, 2.0], ExperimentCondition(time=1.0), [1.0, 2.0])])
    with pytest.raises(ShapeMismatch):
        total_loss(lambda x, c: np.zeros(3), data)


@given(st.integers(0, 4), st.integers(0, 3), st.integers(0, 1000))
@settings(max_examples=100)
def test_prop_additivity_and_count_conservation(n_p, n_m, seed):
    data = full_grid(n_p, n_m, seed=seed)
    pred = lambda x, c: 0.5 * x  # noqa: E731
    full = total_loss(pred, data)
    parts = [total_loss(pred, data, LossConfig(include_paths={k})).total for k in (1, 2, 3, 4)]
    assert full.total == pytest.approx(sum(parts), rel=1e-12, abs=1e-12)
    assert sum(v["count"] for v in full.terms.values()) == (n_p + 1) * (n_m + 1)


def with_steady(data, steady=(), a2=()):
    return PairedDataset(data.pairs, data.perturbations, data.medias, frozenset(steady), frozenset(a2))


def test_steady_terms_empty():
    data = full_grid(2, 1)
    r = steady_state_terms(lambda x, c: x + 1, data, None)
    assert (r.value, r.count) == (0.0, 0)


def test_steady_terms_full_grid_count():
    data = with_steady(full_grid(2, 1), [(i, j) for i in range(3) for j in range(2)])
    r = steady_state_terms(lambda x, c: x + 1.0, data, None)
    assert r.count == 6 and r.value == pytest.approx(6.0)
    assert steady_state_terms(lambda x, c: x, data, 2.0).value == 0


def test_steady_terms_use_extra_time():
    data = with_steady(full_grid(1, 0, t=3.0), [(1, 0)])
    seen = []
    steady_state_terms(lambda x, c: (seen.append(c.time), x)[1], data, None)
    steady_state_terms(lambda x, c: (seen.append(c.time), x)[1], data, 0.5)
    assert seen == [3.0, 0.5]


def test_missing_steady_target():
    data = full_grid(2, 0)
    data = PairedDataset(data.pairs[:2], data.perturbations, data.medias, frozenset({(2, 0)}))
    with pytest.raises(MissingSteadyTarget):
        steady_state_terms(lambda x, c: x, data, None)


@given(st.integers(0, 1000))
@settings(max_examples=50)
def test_prop_steady_non_negative(seed):
    data = with_steady(full_grid(2, 1, seed=seed), [(1, 0), (2, 1)])
    rng = np.random.default_rng(seed)
    shift = rng.normal(size=3)
    assert steady_state_terms(lambda x, c: x + shift, data, None).value >= 0


def test_assumption2_counts():
    data = with_steady(full_grid(3, 2), a2=[1, 3])
    r = assumption2_terms(lambda x, c: x, data)
    assert r.count == 4 <= 3 * 2
    assert r.residual_count == 2
    assert assumption2_terms(lambda x, c: x, full_grid(3, 2)).count == 0


def test_assumption2_identity_residual_zero():
    data = with_steady(full_grid(2, 0), a2=[1])
    assert assumption2_terms(lambda x, c: x, data).value == 0


def test_assumption2_missing_row():
    data = full_grid(2, 1)
    data = PairedDataset([p for p in data.pairs if p.condition.perturbation != data.perturbations[1]
                          or p.condition.media.is_baseline], data.perturbations, data.medias,
                         assumption2_set=frozenset({1}))
    with pytest.raises(MissingRow):
        assumption2_terms(lambda x, c: x, data)


def test_breakdown_json():
    data = with_steady(full_grid(2, 1), [(0, 0)], [1])
    js = full_breakdown(lambda x, c: x, data).to_json()
    assert {"total", "path1", "path2", "path3", "path4", "steady", "assumption2"} <= set(js)


def test_energy_singletons():
    a, b = np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])
    assert energy_distance(a, b) == pytest.approx(10.0)


def test_energy_matches_bruteforce_integer_sets():
    rng = np.random.default_rng(0)
    a = rng.integers(-5, 6, size=(3, 4)).astype(float)
    b = rng.integers(-5, 6, size=(4, 4)).astype(float)
    assert abs(energy_distance(a, b) - energy_distance_bruteforce(a, b)) < 1e-12


sets = st.integers(1, 5).flatmap(lambda n: arrays(np.float64, (n, 3), elements=st.floats(-10, 10)))


@given(sets, sets)
@settings(max_examples=200)
def test_prop_energy_symmetric_non_negative(a, b):
    assert energy_distance(a, b) == pytest.approx(energy_distance(b, a), abs=1e-12)
    assert energy_distance(a, b) >= 0
    assert energy_distance(a, a) == pytest.approx(0.0, abs=1e-9)


def test_moment_mse_identical():
    a = np.random.default_rng(1).normal(size=(6, 3))
    assert moment_mse(a, a) == 0 and distribution_loss("moment", a, a) == 0


def test_random_match_seeded():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(5, 2)), rng.normal(size=(3, 2))
    assert random_match(a, b, 7) == random_match(a, b, 7)
    assert random_match(a, a[:1], 0) == pytest.approx(np.mean((a - a[0]) ** 2))


def test_distribution_loss_empty():
    with pytest.raises(EmptySet):
        distribution_loss("energy", np.zeros((0, 2)), np.ones((2, 2)))


def test_standardized_uses_given_keys():
    data = full_grid(2, 0, n_g=2)
    keys = [p.key for p in data.pairs[:2]]
    out, mean, scale = standardized(data, keys)
    ref = np.stack([p.target for p in data.pairs[:2]])
    assert np.allclose(mean, ref.mean(axis=0)) and np.allclose(scale, ref.std(axis=0))
    assert np.allclose(out.pairs[2].target, (data.pairs[2].target - mean) / scale)


def test_final_time_split():
    perts = [NO_PERTURBATION] + [PerturbationMap.from_dict({g: "ko"}) for g in range(3)]
    pairs = [Pair([0.0], ExperimentCondition(p, BASELINE, t), [0.0]) for p in perts for t in (1.0, 2.0)]
    data = PairedDataset(pairs, perts)
    train, test = final_time_split(data, [1, 3])
    assert sorted(test) == sorted(ExperimentCondition(perts[i], BASELINE, 2.0).key() for i in (1, 3))
    assert set(train) | set(test) == {p.key for p in pairs} and not set(train) & set(test)
    with pytest.raises(ValueError):
        final_time_split(data, [0])
