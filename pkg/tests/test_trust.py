import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import joint_tables, table_to_pairs, trust_from_definition
from privrec.trust import (InsufficientOverlapError, TrustScore, UndefinedTrustError,
                           compute_trust, degenerate_trust, discretize, filter_by_threshold,
                           trust_many, trust_or_convention, trust_stats)


def test_discretize_integer_scores():
    assert discretize([1, 2, 3, 4, 5, 6], 6, (1, 6)).tolist() == [0, 1, 2, 3, 4, 5]


def test_discretize_constant_and_extremes():
    assert len(set(discretize([3.3] * 5, 4, (-10, 10)).tolist())) == 1
    assert discretize([-10, 10], 2, (-10, 10)).tolist() == [0, 1]
    assert discretize([], 3, (0, 1)).tolist() == []


def test_discretize_boundary_goes_low_and_clamps():
    assert discretize([0.0], 2, (-10, 10)).tolist() == [0]
    assert discretize([-50, 50], 4, (-10, 10)).tolist() == [0, 3]
    with pytest.raises(ValueError):
        discretize([1.0], 1, (0, 1))


def test_identical_sequences_full_trust():
    assert compute_trust([1, 1, 2, 2], [1, 1, 2, 2], 2, (1, 2)).value == 1.0


def test_independent_table_zero_trust():
    t = compute_trust([1, 2, 1, 2], [1, 1, 2, 2], 2, (1, 2))
    assert t.value == pytest.approx(0.0, abs=1e-12)


def test_partial_dependence_matches_oracle():
    a, b = [1, 1, 2, 2], [1, 1, 1, 2]
    expected = trust_from_definition(discretize(a, 2, (1, 2)), discretize(b, 2, (1, 2)))
    assert compute_trust(a, b, 2, (1, 2)).value == pytest.approx(expected, abs=1e-12)


def test_stats_invariants():
    s = trust_stats([0, 1, 1, 2], [2, 1, 1, 0], 3)
    assert s.n_i.sum() == 4 == s.n_ij.sum()
    assert s.H_a_given_b <= s.H_a + 1e-12


@pytest.mark.parametrize("Z", [2, 3])
def test_oracle_equivalence_small_tables(Z):
    for N in range(2, 6):
        for table in joint_tables(Z, N):
            a, b = table_to_pairs(table)
            ref = trust_from_definition(a, b)
            av = np.array(a) + 0.5
            bv = np.array(b) + 0.5
            if ref is None:
                with pytest.raises(UndefinedTrustError):
                    compute_trust(av, bv, Z, (0, Z))
            else:
                assert compute_trust(av, bv, Z, (0, Z)).value == pytest.approx(ref, abs=1e-12)


def test_errors():
    with pytest.raises(InsufficientOverlapError):
        compute_trust([1.0], [1.0])
    with pytest.raises(UndefinedTrustError):
        compute_trust([2.0, 2.0, 2.0], [1.0, 5.0, -3.0])
    with pytest.raises(ValueError):
        compute_trust([1.0, 2.0], [1.0])


def test_degenerate_convention():
    assert degenerate_trust([2.0, 2.0], [1.0, 0.5], 5, (-10, 10)) == 1.0
    assert degenerate_trust([2.0, 2.0], [2.5, -9.0], 5, (-10, 10)) == 0.0
    assert trust_or_convention([2.0, 2.0], [1.0, -1.5]).value == 1.0


def test_filter_examples():
    scores = [TrustScore(v, 3) for v in (0.2, 0.5, 0.9)]
    assert [s.value for s in filter_by_threshold(scores, 0.5)] == [0.9]
    assert filter_by_threshold(scores + [TrustScore(1.0, 3)], 1.0) == []
    assert [s.value for s in filter_by_threshold(scores + [TrustScore(0.0, 3)], 0.0)] == [0.2, 0.5, 0.9]
    with pytest.raises(ValueError):
        filter_by_threshold(scores, 1.5)


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=2, max_size=30))
@settings(max_examples=200, deadline=None)
def test_trust_bounded(pairs):
    a, b = zip(*pairs)
    try:
        t = compute_trust(a, b)
    except UndefinedTrustError:
        return
    assert 0.0 <= t.value <= 1.0


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=20), st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_self_trust_under_shared_permutation(a, r):
    idx = list(range(len(a)))
    r.shuffle(idx)
    perm = [a[i] for i in idx]
    try:
        assert compute_trust(perm, perm).value == 1.0
    except UndefinedTrustError:
        pass


def test_trust_many_matches_scalar(np_rng):
    values = np_rng.uniform(-10, 10, (60, 25))
    mask = np_rng.random((60, 25)) < 0.5
    tv = np_rng.uniform(-10, 10, 25)
    tm = np_rng.random(25) < 0.6
    t, n = trust_many(tv, tm, values, mask)
    for r in range(60):
        co = mask[r] & tm
        assert n[r] == co.sum()
        if co.sum() < 2:
            assert np.isnan(t[r])
            continue
        ref = trust_or_convention(tv[co], values[r, co]).value
        assert t[r] == pytest.approx(ref, abs=1e-12)
