from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cf_from_definition, entropy_bits
from privrec.dataset import RatingMatrix, SplitSpec, synthetic
from privrec.evaluation import (EvalError, Fig7Config, Fig56Config, cf_predict, clear_cf_oracle,
                                linear_r2, mae, run_fig3, run_fig4, run_fig7, run_fig56, spearman,
                                vi)
from privrec.trust import discretize

# metrics


def test_mae_examples():
    assert mae([1, 2], [1, 2]) == 0.0
    assert mae([2, 2, 2], [1, 2, 3]) == pytest.approx(2 / 3)
    assert mae([5], [3]) == 2.0
    with pytest.raises(EvalError):
        mae([1, 2], [1])
    with pytest.raises(EvalError):
        mae([], [])


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=20))
def test_mae_nonnegative_zero_iff_equal(pairs):
    p, r = zip(*pairs)
    assert mae(p, r) >= 0
    assert (mae(p, r) == 0) == all(a == b for a, b in pairs)


def test_vi_identity_and_relabel():
    x = np.random.default_rng(0).uniform(-10, 10, 500)
    assert vi(x, x) == 0.0
    # swap the two halves of the range: a bijection between states
    y = np.where(x > 0, x - 10, x + 10)
    assert vi(x, y, Z=2) == pytest.approx(0.0, abs=1e-12)


def test_vi_independent_uniform():
    r = np.random.default_rng(1)
    x = r.uniform(-10, 10, 100_000)
    y = r.uniform(-10, 10, 100_000)
    assert abs(vi(x, y, Z=2) - 2.0) <= 0.05


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=40))
@settings(max_examples=100)
def test_vi_symmetric_and_bounded(pairs):
    x, y = map(np.array, zip(*pairs))
    assert abs(vi(x, y) - vi(y, x)) <= 1e-12
    hx = entropy_bits(discretize(x, 10, (-10, 10)).tolist())
    hy = entropy_bits(discretize(y, 10, (-10, 10)).tolist())
    assert vi(x, y) <= hx + hy + 1e-12


def test_vi_errors():
    with pytest.raises(EvalError):
        vi([], [])
    with pytest.raises(EvalError):
        vi([1.0], [1.0, 2.0])


# plaintext CF oracle


def test_single_participant_formula():
    m = RatingMatrix([[2.0, np.nan], [1.0, 4.0], [3.0, 2.0]])
    # r_a = 2, r_q = 3, participant 1 rated 4
    assert clear_cf_oracle(m, 0, {1: 1.0}, 0.0, 1) == pytest.approx(2.0 + (4.0 - 3.0))


def test_centred_terms_vanish():
    m = RatingMatrix([[1.0, np.nan], [5.0, 3.0], [7.0, 3.0]])
    assert clear_cf_oracle(m, 0, {1: 0.4, 2: 0.9}, 0.0, 1) == pytest.approx(1.0)


def test_hand_built_three_user_table():
    m = RatingMatrix([[4.0, 2.0, np.nan], [1.0, np.nan, 6.0], [3.0, 5.0, 0.0]])
    # r_a = 3; r_q = 3; terms: T=0.5 * (6-3), T=0.25 * (0-3) -> (1.5 - 0.75) / 0.75 = 1
    assert clear_cf_oracle(m, 0, {1: 0.5, 2: 0.25}, 0.0, 2) == pytest.approx(4.0)
    assert clear_cf_oracle(m, 0, {1: 0.5, 2: 0.25}, 0.5, 2) is None


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_equal_trusts_reduce_to_unweighted_cf(seed):
    r = np.random.default_rng(seed)
    vals = r.uniform(-10, 10, (5, 4))
    mask = r.random((5, 4)) < 0.7
    mask[0, 0] = True
    mask[0, 3] = False
    mask[1, 3] = True
    m = RatingMatrix(vals, mask)
    rows = [[float(v) if ok else None for v, ok in zip(vr, mr)] for vr, mr in zip(vals, mask)]
    trusts = {j: 0.6 for j in range(1, 5)}
    expected = cf_from_definition(rows, 0, trusts, 0.0, 3)
    assert clear_cf_oracle(m, 0, trusts, 0.0, 3) == pytest.approx(expected, abs=1e-12)
    out = cf_predict(m.user_mean(0), [np.nan] + [0.6] * 4, m.filled(0.0), mask, [3])
    assert out[0] == pytest.approx(expected, abs=1e-12)


def test_cf_predict_falls_back_to_mean():
    out = cf_predict(1.5, [0.0, 0.0], np.zeros((2, 2)), np.ones((2, 2), bool), [0, 1], theta=0.0)
    assert out.tolist() == [1.5, 1.5]


def test_stat_helpers():
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert linear_r2([1, 2, 3, 4], [2, 4, 6, 8]) == pytest.approx(1.0)


# experiment runners


def test_fig3_small_sweep():
    report = run_fig3((256, 512), record_count=20, repeats=2)
    assert report.assertions == {"strictly_increasing": "PASS"}
    assert any("12.241" in n for n in report.notes)
    single = run_fig3((256,), record_count=5, repeats=1)
    assert single.assertions == {"strictly_increasing": "NOT-APPLICABLE"}
    with pytest.raises(EvalError):
        run_fig3((512, 256))


def test_fig4_small_sweep():
    report = run_fig4((500, 1000, 2000), key_bits=256)
    assert report.assertions["linear_fit"] == "PASS"
    assert report.metrics["encrypt_s"][0] < report.metrics["encrypt_s"][-1]
    with pytest.raises(EvalError):
        run_fig4((0, 100))


def test_fig56_degenerate_and_skipped_points():
    m = synthetic(60, 20, seed=0)
    plan = Fig56Config().plan
    cfg = Fig56Config(d_sweep=(4, 500), plan=replace(plan, L=20, trust_intervals=((0.0, 1.0, 20),)))
    report = run_fig56(m, cfg)
    assert report.sweep == [4]
    assert report.assertions["mae_nonincreasing"] == "NOT-APPLICABLE"
    assert any("d=500 skipped" in n for n in report.notes)


def test_fig56_full_dimension_equals_baseline():
    m = synthetic(60, 20, seed=1)
    plan = replace(Fig56Config().plan, L=20, trust_intervals=((0.0, 1.0, 20),))
    report = run_fig56(m, Fig56Config(d_sweep=(2, 20), plan=plan))
    assert report.assertions["full_dimension_matches_baseline"] == "PASS"


def test_fig7_sparse_data_trend():
    m = synthetic(200, 40, density=0.15, seed=0)
    cfg = Fig7Config(fractions=(0.1, 0.3, 0.6, 1.0), n_targets=20, split=SplitSpec(0.8, 5, 0))
    report = run_fig7(m, cfg)
    maes = report.metrics["mae"]
    assert maes[0] > maes[-1]
    assert spearman(report.sweep, maes) <= -0.5
    assert report.metrics["participants"][-1] == 160


def test_fig7_skips_empty_fraction():
    m = synthetic(30, 20, seed=2)
    cfg = Fig7Config(fractions=(0.0, 1.0), n_targets=2, split=SplitSpec(0.8, 3, 0))
    report = run_fig7(m, cfg)
    assert report.sweep == [1.0]
    assert any("skipped" in n for n in report.notes)
    assert report.assertions["sixty_percent_close"] == "NOT-APPLICABLE"
