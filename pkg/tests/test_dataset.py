import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privrec.dataset import (DatasetError, FormatOptions, IntegrityError, ItemMeta, ParseError,
                             RatingMatrix, SplitSpec, UndefinedMeanError, default_catalog,
                             dump_jester, imputed, item_mean, item_means, load_item_meta,
                             load_jester, parse_jester, split, synthetic)


def test_row_maps_sentinel_to_unrated():
    m = parse_jester(["2, 4.5, 99, -3.0"])
    assert m.shape == (1, 3)
    assert m.mask.tolist() == [[True, False, True]]
    assert m.values[0, 0] == 4.5 and m.values[0, 2] == -3.0
    assert np.isnan(m.values[0, 1])
    assert m.rated_count.tolist() == [2]


def test_empty_input_has_no_rows():
    with pytest.raises(DatasetError, match="no rows"):
        parse_jester([])


def test_declared_count_mismatch():
    with pytest.raises(IntegrityError, match="declares 3 rated items, contains 2") as exc:
        parse_jester(["3, 4.5, 99, -3.0"])
    assert exc.value.row == 0


def test_field_count_and_number_errors_name_the_row():
    with pytest.raises(ParseError) as exc:
        parse_jester(["1, 1.0, 99", "1, 2.0"])
    assert exc.value.row == 1
    with pytest.raises(ParseError, match="unparsable"):
        parse_jester(["1, abc, 99"])


def test_custom_sentinel_and_delimiter():
    m = parse_jester(["1;-1;5.5"], FormatOptions(sentinel=-1, delimiter=";"))
    assert m.mask.tolist() == [[False, True]]


def test_out_of_range_rating_rejected():
    with pytest.raises(DatasetError, match="range"):
        parse_jester(["1, 12.0, 99"])


def test_round_trip_is_bit_exact(tmp_path):
    m = synthetic(25, 12, seed=3)
    path = tmp_path / "r.csv"
    dump_jester(m, path)
    back = load_jester(path)
    assert back == m
    assert np.array_equal(back.values[back.mask], m.values[m.mask])


@given(st.lists(st.lists(st.one_of(st.none(), st.floats(-10, 10)), min_size=3, max_size=3), min_size=1, max_size=6))
@settings(max_examples=60, deadline=None)
def test_round_trip_property(rows):
    values = np.array([[np.nan if v is None else v for v in r] for r in rows])
    m = RatingMatrix(values)
    lines = []
    for u in range(m.n_users):
        cells = [repr(float(v)) if ok else "99.0" for v, ok in zip(m.values[u], m.mask[u])]
        lines.append(",".join([str(int(m.rated_count[u]))] + cells))
    assert parse_jester(lines) == m


def test_item_mean_examples():
    m = RatingMatrix([[3.0], [np.nan], [5.0]])
    assert item_mean(m, 0) == 4.0
    assert item_mean(RatingMatrix([[7.0]]), 0) == 7.0
    with pytest.raises(UndefinedMeanError, match="undefined item mean"):
        item_mean(RatingMatrix([[np.nan, 1.0]]), 0)


@given(st.floats(-10, 10), st.integers(1, 20))
def test_item_mean_of_constant_column(c, n):
    m = RatingMatrix(np.full((n, 1), c))
    assert item_mean(m, 0) == pytest.approx(c, abs=1e-12)


def test_item_means_nan_where_unrated():
    m = RatingMatrix([[1.0, np.nan], [3.0, np.nan]])
    out = item_means(m)
    assert out[0] == 2.0 and np.isnan(out[1])


def test_split_is_deterministic():
    m = synthetic(50, 20, seed=1)
    a = split(m, SplitSpec(0.7, 3, 7))
    b = split(m, SplitSpec(0.7, 3, 7))
    assert np.array_equal(a.train_users, b.train_users)
    assert [(p.user, p.hidden.tolist()) for p in a.test] == [(p.user, p.hidden.tolist()) for p in b.test]


def test_split_holdout_zero_keeps_profiles():
    m = synthetic(20, 15, seed=2)
    sp = split(m, SplitSpec(0.5, 0, 0))
    for p in sp.test:
        assert p.hidden.size == 0
        assert np.array_equal(p.visible, m.rated_items(p.user))


def test_split_partitions_rated_items():
    values = np.full((4, 6), np.nan)
    values[:, :5] = 1.0
    m = RatingMatrix(values)
    sp = split(m, SplitSpec(0.5, 2, 0))
    for p in sp.test:
        assert p.visible.size == 3 and p.hidden.size == 2
        assert not set(p.visible) & set(p.hidden)
        assert sorted(set(p.visible) | set(p.hidden)) == list(range(5))
        vals, mask = sp.target_row(p)
        assert not mask[p.hidden].any()


def test_split_excludes_sparse_users_with_warning():
    values = np.array([[1.0, np.nan, np.nan], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [2.0, 1.0, 1.0]])
    m = RatingMatrix(values)
    sp = split(m, SplitSpec(0.25, 2, 0))
    excluded = {int(w.split()[1]) for w in sp.warnings}
    assert 0 not in {p.user for p in sp.test}
    assert excluded <= {0}


@given(st.integers(2, 60), st.floats(0.05, 0.95))
@settings(max_examples=40, deadline=None)
def test_train_size_close_to_fraction(n, f):
    m = RatingMatrix(np.ones((n, 3)))
    sp = split(m, SplitSpec(f, 0, 0))
    assert abs(sp.train.n_users - f * n) <= 1


def test_synthetic_shape_and_floor():
    m = synthetic(30, 50, density=0.01, seed=4)
    assert m.shape == (30, 50)
    assert (m.rated_count >= 10).all()
    assert synthetic(30, 50, density=0.01, seed=4) == m


def test_item_meta_loader(tmp_path):
    p = tmp_path / "items.jsonl"
    p.write_text('{"item_id": "a", "features": ["x", "y"]}\n{"item_id": "b"}\n')
    items = load_item_meta(p)
    assert items == [ItemMeta("a", ("x", "y")), ItemMeta("b", ())]
    p.write_text('{"item_id": "a"}\n{"item_id": "a"}\n')
    with pytest.raises(IntegrityError, match="duplicate"):
        load_item_meta(p)


def test_default_catalog_unique_ids():
    cat = default_catalog(20)
    assert len({c.item_id for c in cat}) == 20
    assert all(c.features for c in cat)


def test_imputed_zero_fill():
    m = RatingMatrix([[1.0, np.nan]])
    dense, mask = imputed(m)
    assert dense.tolist() == [[1.0, 0.0]]
    assert mask.tolist() == [[True, False]]


def test_matrix_is_read_only():
    m = RatingMatrix([[1.0]])
    with pytest.raises(ValueError):
        m.values[0, 0] = 2.0
