import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from screenode.errors import DegenerateCloud, EmptyPairing
from screenode.experiment import PerturbationMap
from screenode.grn import differentiate
from screenode.networks import differentiating_network
from screenode.pseudotime import (
    PseudotimeAssignment,
    assign_perturbed,
    build_trajectory_pairs,
    order_controls,
    trajectory_pair_indices,
)

T = 6.0
KO_DRIVER = PerturbationMap.from_dict({0: "ko"})


def diff_cells(n=200, seed=0, jitter=None, pert=None):
    spec = differentiating_network()
    kw = {} if pert is None else {"perturbation": pert}
    states, tau = differentiate(spec, n, T, seed, jitter=jitter, **kw)
    return np.log1p(states), tau, np.log1p(spec.baseline)


def test_two_cells_rank_scaling():
    a = order_controls([[0.0, 0.0], [1.0, 2.0]], 3.0, start=[0.0, 0.0])
    assert np.allclose(a.sigma, [1.0, 2.0])


def test_degenerate_cloud():
    with pytest.raises(DegenerateCloud):
        order_controls(np.ones((4, 3)), 1.0)


def test_noiseless_spearman():
    cells, tau, start = diff_cells(jitter=0.0)
    a = order_controls(cells, T, start)
    assert spearmanr(a.sigma, tau)[0] > 0.99


def test_noiseless_strictly_monotone():
    cells, tau, start = diff_cells(n=50, jitter=0.0)
    sigma = order_controls(cells, T, start).sigma
    o = np.argsort(tau)
    assert np.all(np.diff(sigma[o]) > 0)


def test_default_jitter_spearman():
    cells, tau, start = diff_cells()
    assert spearmanr(order_controls(cells, T, start).sigma, tau)[0] > 0.9


@given(st.integers(0, 10_000), st.booleans())
@settings(max_examples=50)
def test_prop_permutation_invariance(seed, anchored):
    cells, _, start = diff_cells(n=30, seed=seed)
    start = start if anchored else None
    perm = np.random.default_rng(seed).permutation(30)
    a = order_controls(cells, T, start).sigma
    b = order_controls(cells[perm], T, start).sigma
    assert np.allclose(a[perm], b, rtol=0, atol=1e-12)


@given(st.integers(2, 40), st.floats(0.1, 100), st.integers(0, 1000))
@settings(max_examples=100)
def test_prop_range_open_interval(n, t, seed):
    cells = np.random.default_rng(seed).normal(size=(n, 3))
    s = order_controls(cells, t).sigma
    assert np.all(s > 0) and np.all(s < t)


def test_identical_cell_gets_exact_sigma():
    cells, _, start = diff_cells(n=40)
    ctrl = order_controls(cells, T, start)
    out = assign_perturbed(ctrl, cells, cells[[7, 3, 7]])
    assert np.array_equal(out.sigma, ctrl.sigma[[7, 3, 7]])
    assert list(out.neighbor) == [7, 3, 7]


def test_self_assignment_idempotent():
    cells, _, start = diff_cells(n=60)
    ctrl = order_controls(cells, T, start)
    assert np.array_equal(assign_perturbed(ctrl, cells, cells).sigma, ctrl.sigma)


def test_tie_goes_to_lower_index():
    ctrl_cells = np.array([[2.0, 0.0], [0.0, 0.0], [-2.0, 0.0]])
    ctrl = PseudotimeAssignment(np.array([1.0, 2.0, 3.0]), "control", 4.0)
    out = assign_perturbed(ctrl, ctrl_cells, [[1.0, 0.0], [-1.0, 0.0]])
    assert list(out.neighbor) == [0, 1]


def test_driver_knockout_lowest_quartile():
    cells, _, start = diff_cells(n=300)
    ctrl = order_controls(cells, T, start)
    ko, _, _ = diff_cells(n=100, seed=1, pert=KO_DRIVER)
    out = assign_perturbed(ctrl, cells, ko)
    assert np.mean(out.sigma < T / 4) >= 0.9


def test_single_pair():
    c = PseudotimeAssignment(np.array([1.0]), "control", 3.0)
    p = PseudotimeAssignment(np.array([2.0]), "perturbed", 3.0, np.array([0]))
    data = build_trajectory_pairs([[1.0, 2.0]], [[3.0, 4.0]], c, p, KO_DRIVER)
    assert len(data.pairs) == 1
    assert data.pairs[0].condition.time == pytest.approx(1.0)


def test_empty_pairing():
    c = PseudotimeAssignment(np.array([2.0, 2.5]), "control", 3.0)
    p = PseudotimeAssignment(np.array([1.0]), "perturbed", 3.0, np.array([0]))
    with pytest.raises(EmptyPairing):
        build_trajectory_pairs(np.ones((2, 2)), np.ones((1, 2)), c, p, KO_DRIVER)


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=15),
       st.lists(st.floats(0.01, 0.99), min_size=1, max_size=15))
@settings(max_examples=200)
def test_prop_pair_count_bruteforce(sc, sp):
    idx = trajectory_pair_indices(np.array(sc), np.array(sp))
    brute = {(i, j) for i in range(len(sc)) for j in range(len(sp)) if sc[i] < sp[j]}
    assert len(idx) == len(brute) and set(idx) == brute


def test_stride_thins_pairs():
    s = np.linspace(0.1, 0.9, 10)
    assert len(trajectory_pair_indices(s, s + 0.05, stride=2)) < len(trajectory_pair_indices(s, s + 0.05))
    with pytest.raises(ValueError):
        trajectory_pair_indices(s, s, stride=0)


def test_support_expansion():
    cells, _, start = diff_cells(n=400)
    sigma = order_controls(cells, T, start).sigma
    block = list(differentiating_network().differentiation.block)
    early = cells[sigma <= T / 4][:, block]
    late = cells[sigma <= 3 * T / 4][:, block]
    assert np.all(late.min(axis=0) <= early.min(axis=0))
    assert np.all(late.max(axis=0) > early.max(axis=0))


def test_assignment_csv():
    c = PseudotimeAssignment(np.array([1.0, 2.0]), "control", 3.0)
    lines = c.to_csv().splitlines()
    assert lines[0] == "cell_id,population,sigma,neighbor_id"
    assert lines[1] == "0,control,1.0,"
