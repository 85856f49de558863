import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import genes, pmaps, statuses
from screenode.errors import ConflictingPerturbation, DuplicateCondition, NotPerturbable
from screenode.experiment import (
    BASELINE,
    NO_PERTURBATION,
    ExperimentCondition,
    MediaCondition,
    PathLabel,
    PerturbationMap,
    PerturbStatus,
    apply_media,
    apply_perturbation,
    classify_path,
    compose,
    enumerate_conditions,
    grid_index,
    parse_key,
    wait,
)

KO, I, A = PerturbStatus.KNOCKOUT, PerturbStatus.INTERFERE, PerturbStatus.ACTIVATE


def test_single_application():
    assert apply_perturbation(NO_PERTURBATION, 1, KO).as_dict() == {1: KO}


def test_double_knockout_is_idempotent():
    once = apply_perturbation(NO_PERTURBATION, 1, KO)
    assert apply_perturbation(once, 1, KO) == once


@pytest.mark.parametrize("first,second", [(A, I), (I, A), (A, A), (I, I), (KO, A), (A, KO)])
def test_conflicting_retarget_raises(first, second):
    m = apply_perturbation(NO_PERTURBATION, 1, first)
    with pytest.raises(ConflictingPerturbation):
        apply_perturbation(m, 1, second)


def test_distinct_genes_commute_example():
    a = apply_perturbation(apply_perturbation(NO_PERTURBATION, 1, KO), 2, I)
    b = apply_perturbation(apply_perturbation(NO_PERTURBATION, 2, I), 1, KO)
    assert a == b and a.key() == b.key()


def test_none_status_rejected():
    with pytest.raises(ValueError):
        apply_perturbation(NO_PERTURBATION, 0, PerturbStatus.NONE)


def test_perturbable_set_enforced():
    m = PerturbationMap.from_dict({}, perturbable=[0, 1])
    assert apply_perturbation(m, 1, KO).as_dict() == {1: KO}
    with pytest.raises(NotPerturbable):
        apply_perturbation(m, 5, KO)


@pytest.mark.parametrize("pmap,media,label", [
    (NO_PERTURBATION, BASELINE, PathLabel.PATH4),
    (PerturbationMap.from_dict({1: "ko"}), BASELINE, PathLabel.PATH2),
    (NO_PERTURBATION, MediaCondition(1), PathLabel.PATH3),
    (PerturbationMap.from_dict({1: "ko"}), MediaCondition(1), PathLabel.PATH1),
])
def test_classify_path(pmap, media, label):
    assert classify_path(ExperimentCondition(pmap, media, 1.0)) is label


@pytest.mark.parametrize("n_p,n_m,n", [(0, 0, 1), (2, 1, 6), (13, 0, 14)])
def test_enumerate_counts(n_p, n_m, n):
    perts = [PerturbationMap.from_dict({g: "ko"}) for g in range(n_p)]
    medias = [MediaCondition(j + 1) for j in range(n_m)]
    conds = enumerate_conditions(perts, medias, 2.0)
    assert len(conds) == n == len(set(conds))
    assert all(c.time == 2.0 for c in conds)


def test_enumerate_is_perturbation_major():
    perts = [PerturbationMap.from_dict({0: "ko"}), PerturbationMap.from_dict({1: "a"})]
    conds = enumerate_conditions(perts, [MediaCondition(1)], 1.0)
    assert list(grid_index(conds).values()) == [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]


def test_enumerate_rejects_duplicates():
    p = PerturbationMap.from_dict({0: "ko"})
    with pytest.raises(DuplicateCondition):
        enumerate_conditions([p, p], [], 1.0)
    with pytest.raises(DuplicateCondition):
        enumerate_conditions([NO_PERTURBATION], [], 1.0)
    with pytest.raises(DuplicateCondition):
        enumerate_conditions([], [MediaCondition(1), MediaCondition(1)], 1.0)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        ExperimentCondition(time=-1.0)


def test_compose_and_wait():
    p = PerturbationMap.from_dict({3: "i"})
    c = compose(p, MediaCondition(2), 1.5)
    assert c == ExperimentCondition(p, MediaCondition(2), 1.5)
    assert wait(c, 0.5).time == 2.0
    assert wait(c, 0.0) == c


@given(pmaps, st.integers(0, 4), st.floats(0, 100, allow_nan=False))
@settings(max_examples=300)
def test_identity_actions(pmap, m, t):
    c = ExperimentCondition(pmap, MediaCondition(m), t)
    assert apply_media(c, BASELINE) == c
    assert wait(c, 0.0) == c


@given(pmaps, st.integers(0, 4), st.floats(0, 1e6, allow_nan=False, allow_infinity=False))
@settings(max_examples=300)
def test_key_and_json_round_trip(pmap, m, t):
    c = ExperimentCondition(pmap, MediaCondition(m), t)
    assert parse_key(c.key()) == c
    assert ExperimentCondition.from_json(c.to_json()) == c


def test_malformed_key():
    with pytest.raises(ValueError):
        parse_key("p=0:ko;t=1")


# -- algebra laws; the acceptance suite reruns these at 1000+ cases --

def knockout_idempotence(pmap, g):
    if pmap.status(g) not in (PerturbStatus.NONE, KO):
        return
    once = apply_perturbation(pmap, g, KO)
    assert apply_perturbation(once, g, KO) == once
    assert once.status(g) is KO


def distinct_commute(pmap, g, h, s, r):
    if g == h or pmap.status(g) is not PerturbStatus.NONE or pmap.status(h) is not PerturbStatus.NONE:
        return
    a = apply_perturbation(apply_perturbation(pmap, g, s), h, r)
    b = apply_perturbation(apply_perturbation(pmap, h, r), g, s)
    assert a == b and a.key() == b.key()


def conflict_rejection(pmap, g, s):
    cur = pmap.status(g)
    if cur is PerturbStatus.NONE or (cur is KO and s is KO):
        return
    with pytest.raises(ConflictingPerturbation):
        apply_perturbation(pmap, g, s)


def path_partition(n_p, n_m):
    perts = [PerturbationMap.from_dict({g: "ko"}) for g in range(n_p)]
    medias = [MediaCondition(j + 1) for j in range(n_m)]
    conds = enumerate_conditions(perts, medias, 1.0)
    counts = {lab: 0 for lab in PathLabel}
    for c in conds:
        counts[classify_path(c)] += 1
    assert [counts[lab] for lab in PathLabel] == [n_p * n_m, n_p, n_m, 1]
    assert sum(counts.values()) == len(conds) == (n_p + 1) * (n_m + 1)


@given(pmaps, genes)
@settings(max_examples=300)
def test_prop_knockout_idempotence(pmap, g):
    knockout_idempotence(pmap, g)


@given(pmaps, genes, genes, statuses, statuses)
@settings(max_examples=300)
def test_prop_distinct_commute(pmap, g, h, s, r):
    distinct_commute(pmap, g, h, s, r)


@given(pmaps, genes, statuses)
@settings(max_examples=300)
def test_prop_conflict_rejection(pmap, g, s):
    conflict_rejection(pmap, g, s)


@given(st.integers(0, 12), st.integers(0, 6))
@settings(max_examples=200)
def test_prop_path_partition(n_p, n_m):
    path_partition(n_p, n_m)


def test_multi_gene_order_independence():
    steps = [(0, KO), (3, I), (5, A)]
    results = set()
    for perm in itertools.permutations(steps):
        m = NO_PERTURBATION
        for g, s in perm:
            m = apply_perturbation(m, g, s)
        results.add(m)
    assert len(results) == 1
