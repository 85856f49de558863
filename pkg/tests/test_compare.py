import numpy as np
import pytest

from screenode.compare import BASELINE_VARIANT, STEADY_VARIANT, CompareSummary, ModelConfig, train_compare
from screenode.node import TrainConfig

TINY = ModelConfig(hidden=(8,), embed=(3, 1), n_steps=4)
SHORT = TrainConfig(epochs=5)


def test_replica_shape(replica):
    data = replica.paired()
    assert len(data.pairs) == 100
    assert len(replica.perturbations) == 25
    assert data.pairs[0].target.shape == (120,)
    assert replica.perturbations[0].is_none


def test_default_split_holds_out_diverging_last_day(replica):
    train, test = replica.default_split()
    assert len(test) == 11 and len(train) == 89
    data = replica.paired()
    held = [p for p in data.pairs if p.key in set(test)]
    assert {p.condition.time for p in held} == {5.0}


def test_zero_weight_gives_identical_variants(replica):
    data = replica.paired(replica.converging)
    s = train_compare(data, replica.default_split(), [0, 1], steady_weight=0.0,
                      model_cfg=TINY, tconfig=SHORT)
    for seed in (0, 1):
        a, b = s.runs[(seed, BASELINE_VARIANT)], s.runs[(seed, STEADY_VARIANT)]
        assert np.array_equal(a.test_mse, b.test_mse)
        assert np.array_equal(a.train_loss, b.train_loss)


def test_same_seed_same_curves(replica):
    data = replica.paired(replica.converging)
    split = replica.default_split()
    a = train_compare(data, split, [3], model_cfg=TINY, tconfig=SHORT)
    b = train_compare(data, split, [3], model_cfg=TINY, tconfig=SHORT)
    for v in (BASELINE_VARIANT, STEADY_VARIANT):
        assert np.array_equal(a.runs[(3, v)].test_mse, b.runs[(3, v)].test_mse)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_training_reduces_train_loss(replica, seed):
    data = replica.paired(replica.converging)
    s = train_compare(data, replica.default_split(), [seed], model_cfg=TINY, tconfig=TrainConfig(epochs=20))
    for v in (BASELINE_VARIANT, STEADY_VARIANT):
        curve = s.runs[(seed, v)].train_loss
        assert curve[-1] < curve[0]


def test_summary_stats_and_verdict():
    s = CompareSummary([0, 1, 2, 3], {BASELINE_VARIANT: np.array([1.0, 2.0, 3.0, 4.0]),
                                      STEADY_VARIANT: np.array([1.0, 1.0, 1.0, 1.0])})
    assert s.stats(BASELINE_VARIANT) == (2.5, 1.5)
    assert s.stats(STEADY_VARIANT) == (1.0, 0.0)
    assert s.median_ok and s.iqr_ok
    assert s.verdict().startswith("steady-augmented loss better")
    rec = s.to_json()
    assert rec["steady_median_le_baseline"] is True and rec["seeds"] == [0, 1, 2, 3]
