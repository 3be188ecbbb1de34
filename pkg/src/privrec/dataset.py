"""Rating matrices, Jester-format ingestion, splits and synthetic data."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

JESTER_SENTINEL = 99.0
JESTER_RANGE = (-10.0, 10.0)


class DatasetError(ValueError):
    """Base class for ingestion problems."""


class ParseError(DatasetError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class IntegrityError(DatasetError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class UndefinedMeanError(DatasetError):
    pass


@dataclass(frozen=True)
class FormatOptions:
    sentinel: float = JESTER_SENTINEL
    delimiter: str = ","
    rating_range: tuple[float, float] = JESTER_RANGE


class RatingMatrix:
    """Dense users x items grid with an explicit rated mask.

    Unrated cells hold NaN in ``values`` and ``False`` in ``mask``; arithmetic
    should always go through the mask.  Instances are read-only once built.
    """

    def __init__(self, values, mask=None, rating_range=JESTER_RANGE):
        values = np.array(values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DatasetError(f"need a non-empty 2-D grid, got shape {values.shape}")
        if mask is None:
            mask = ~np.isnan(values)
        mask = np.array(mask, dtype=bool)
        if mask.shape != values.shape:
            raise DatasetError("mask shape does not match values")
        values = np.where(mask, values, np.nan)
        lo, hi = rating_range
        rated = values[mask]
        if rated.size and (rated.min() < lo or rated.max() > hi):
            raise DatasetError(f"rating outside declared range [{lo}, {hi}]")
        values.flags.writeable = False
        mask.flags.writeable = False
        self.values = values
        self.mask = mask
        self.rating_range = (float(lo), float(hi))

    @property
    def n_users(self) -> int:
        return self.values.shape[0]

    @property
    def n_items(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def rated_count(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def rated_items(self, user: int) -> np.ndarray:
        return np.flatnonzero(self.mask[user])

    def user_mean(self, user: int) -> float:
        row = self.values[user, self.mask[user]]
        if row.size == 0:
            raise UndefinedMeanError(f"user {user} has no ratings")
        return float(row.mean())

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Copy of the grid with unrated cells replaced by ``fill``."""
        return np.where(self.mask, self.values, fill)

    def rows(self, users) -> "RatingMatrix":
        users = np.asarray(users, dtype=int)
        return RatingMatrix(self.values[users], self.mask[users], self.rating_range)

    def with_values(self, values) -> "RatingMatrix":
        """Same mask, new rated values (used for obfuscated copies)."""
        return RatingMatrix(np.where(self.mask, values, np.nan), self.mask, (-np.inf, np.inf))

    def __eq__(self, other):
        if not isinstance(other, RatingMatrix):
            return NotImplemented
        return (
            np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values[self.mask], other.values[other.mask])
            and self.rating_range == other.rating_range
        )

    def __repr__(self):
        return f"RatingMatrix(n_users={self.n_users}, n_items={self.n_items}, rated={int(self.mask.sum())})"


@dataclass(frozen=True)
class ItemMeta:
    item_id: str
    features: tuple[str, ...] = ()


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    holdout: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.holdout < 0:
            raise ValueError("holdout must be non-negative")


@dataclass
class TestProfile:
    user: int
    visible: np.ndarray
    hidden: np.ndarray
    # original row values, aligned with the item axis
    ratings: np.ndarray = field(repr=False)


@dataclass
class Split:
    train: RatingMatrix
    train_users: np.ndarray
    test: list[TestProfile]
    warnings: list[str]

    def target_row(self, profile: TestProfile) -> tuple[np.ndarray, np.ndarray]:
        """(values, mask) of a test user's visible profile."""
        mask = np.zeros(len(profile.ratings), dtype=bool)
        mask[profile.visible] = True
        return np.where(mask, profile.ratings, np.nan), mask


def _parse_number(token: str, row: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(row, f"unparsable number {token.strip()!r}") from None


def parse_jester(lines, options: FormatOptions = FormatOptions()) -> RatingMatrix:
    rows = []
    width = None
    for idx, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        tokens = line.split(options.delimiter)
        declared = _parse_number(tokens[0], idx)
        cells = [_parse_number(t, idx) for t in tokens[1:]]
        if width is None:
            width = len(cells)
            if width == 0:
                raise ParseError(idx, "row has no rating fields")
        elif len(cells) != width:
            raise ParseError(idx, f"expected {width} rating fields, found {len(cells)}")
        actual = sum(1 for c in cells if c != options.sentinel)
        if declared != actual:
            raise IntegrityError(idx, f"declares {declared:g} rated items, contains {actual}")
        rows.append(cells)
    if not rows:
        raise DatasetError("no rows")
    raw = np.array(rows, dtype=float)
    mask = raw != options.sentinel
    return RatingMatrix(np.where(mask, raw, np.nan), mask, options.rating_range)


def load_jester(path, options: FormatOptions = FormatOptions()) -> RatingMatrix:
    with open(path, encoding="utf-8") as fh:
        return parse_jester(fh, options)


def _format_cell(v: float) -> str:
    # repr round-trips doubles exactly
    return repr(float(v))


def dump_jester(m: RatingMatrix, path, options: FormatOptions = FormatOptions()) -> None:
    sentinel = _format_cell(options.sentinel)
    with open(path, "w", encoding="utf-8") as fh:
        for u in range(m.n_users):
            cells = [
                _format_cell(m.values[u, q]) if m.mask[u, q] else sentinel
                for q in range(m.n_items)
            ]
            fh.write(options.delimiter.join([str(int(m.rated_count[u]))] + cells) + "\n")


def load_item_meta(path) -> list[ItemMeta]:
    items = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            if not line.strip():
                continue
            obj = json.loads(line)
            item_id = str(obj["item_id"])
            features = tuple(str(f) for f in obj.get("features", []))
            if item_id in seen:
                raise IntegrityError(idx, f"duplicate item_id {item_id!r}")
            seen.add(item_id)
            items.append(ItemMeta(item_id, features))
    return items


def default_catalog(n_items: int) -> list[ItemMeta]:
    return [ItemMeta(f"item-{q}", (f"genre-{q % 7}", f"tag-{q}")) for q in range(n_items)]


def item_mean(m: RatingMatrix, q: int) -> float:
    col = m.values[m.mask[:, q], q]
    if col.size == 0:
        raise UndefinedMeanError(f"undefined item mean: item {q} has no raters")
    return float(col.mean())


def item_means(m: RatingMatrix) -> np.ndarray:
    """Vector of item means, NaN where an item has no raters."""
    counts = m.mask.sum(axis=0)
    sums = np.where(m.mask, m.values, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def split(m: RatingMatrix, spec: SplitSpec) -> Split:
    """Train/test split by user; test users get their ratings partitioned.

    Test users who rate no more items than ``spec.holdout`` are dropped from
    the test list with a warning.
    """
    rng = np.random.default_rng(spec.rng_seed)
    order = rng.permutation(m.n_users)
    n_train = int(round(spec.train_fraction * m.n_users))
    n_train = min(max(n_train, 1), m.n_users - 1) if m.n_users > 1 else 1
    train_users = np.sort(order[:n_train])
    test_users = np.sort(order[n_train:])
    warnings = []
    test = []
    for u in test_users:
        rated = m.rated_items(u)
        if rated.size <= spec.holdout:
            msg = f"user {u} rates {rated.size} items, cannot hold out {spec.holdout}; excluded"
            log.warning(msg)
            warnings.append(msg)
            continue
        hidden = np.sort(rng.choice(rated, size=spec.holdout, replace=False))
        visible = np.setdiff1d(rated, hidden)
        test.append(TestProfile(int(u), visible, hidden, m.values[u].copy()))
    return Split(m.rows(train_users), train_users, test, warnings)


def synthetic(
    n_users: int = 500,
    n_items: int = 100,
    *,
    mode: str = "clustered",
    n_groups: int = 6,
    density: float = 0.6,
    noise: float = 1.5,
    seed: int = 0,
    rating_range: tuple[float, float] = JESTER_RANGE,
) -> RatingMatrix:
    """Seeded synthetic ratings.

    ``uniform`` draws every rating independently.  ``clustered`` gives each
    user a preference group, each group an item taste vector, and adds a
    per-user bias and Gaussian noise; ratings are clipped to the range.
    Every user rates at least ``min(n_items, 10)`` items.
    """
    rng = np.random.default_rng(seed)
    lo, hi = rating_range
    if mode == "uniform":
        values = rng.uniform(lo, hi, size=(n_users, n_items))
    elif mode == "clustered":
        span = (hi - lo) / 2.0
        centre = (hi + lo) / 2.0
        tastes = rng.uniform(-0.7 * span, 0.7 * span, size=(n_groups, n_items))
        groups = rng.integers(n_groups, size=n_users)
        bias = rng.normal(0.0, 0.1 * span, size=(n_users, 1))
        values = centre + tastes[groups] + bias + rng.normal(0.0, noise, size=(n_users, n_items))
    else:
        raise ValueError(f"unknown synthetic mode {mode!r}")
    values = np.clip(values, lo, hi)
    mask = rng.random((n_users, n_items)) < density
    floor = min(n_items, 10)
    for u in np.flatnonzero(mask.sum(axis=1) < floor):
        mask[u, rng.choice(n_items, size=floor, replace=False)] = True
    return RatingMatrix(np.where(mask, values, np.nan), mask, rating_range)


def imputed(m: RatingMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Zero-filled dense grid plus the mask of genuinely rated cells."""
    return m.filled(0.0), m.mask.copy()
