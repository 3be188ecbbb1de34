"""Entropy-based trust between a target user and a participant.

Trust is the fraction of the target's rating entropy explained by the
participant's ratings on the same items::

    T = (H(a) - H(a | b)) / H(a)

with empirical base-2 entropies over discretized rating states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_STATES = 5
DEFAULT_MIN_SHARED = 2


class TrustError(ValueError):
    pass


class InsufficientOverlapError(TrustError):
    pass


class UndefinedTrustError(TrustError):
    """Target entropy is zero; the ratio is undefined."""


@dataclass(frozen=True)
class TrustStats:
    Z: int
    N: int
    n_i: np.ndarray
    n_ij: np.ndarray
    H_a: float
    H_a_given_b: float


@dataclass(frozen=True)
class TrustScore:
    value: float
    n_shared: int
    pair: tuple[str, str] | None = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"trust {self.value} outside [0, 1]")


def discretize(ratings, Z: int, rating_range: tuple[float, float]) -> np.ndarray:
    """Equal-width binning into ``Z`` states.

    A value on an interior bin edge goes to the lower bin; the range maximum
    goes to state ``Z - 1``.  Values outside the range are clamped.
    """
    if Z < 2:
        raise ValueError("need at least two states")
    lo, hi = rating_range
    if not hi > lo:
        raise ValueError("degenerate rating range")
    x = np.asarray(ratings, dtype=float)
    if x.size == 0:
        return np.zeros(0, dtype=int)
    pos = (x - lo) * Z / (hi - lo)
    states = np.ceil(pos).astype(int) - 1
    return np.clip(states, 0, Z - 1)


def _entropy_from_counts(counts) -> float:
    c = np.asarray(counts, dtype=float).ravel()
    c = c[c > 0]
    n = c.sum()
    if n == 0:
        return 0.0
    p = c / n
    return float(-(p * np.log2(p)).sum())


def trust_stats(a_states, b_states, Z: int) -> TrustStats:
    a = np.asarray(a_states, dtype=int)
    b = np.asarray(b_states, dtype=int)
    joint = np.zeros((Z, Z), dtype=int)
    np.add.at(joint, (a, b), 1)
    n_i = joint.sum(axis=1)
    H_a = _entropy_from_counts(n_i)
    H_ab = _entropy_from_counts(joint)
    H_b = _entropy_from_counts(joint.sum(axis=0))
    return TrustStats(Z, int(a.size), n_i, joint, H_a, H_ab - H_b)


def compute_trust(
    target_shared,
    participant_shared,
    Z: int = DEFAULT_STATES,
    rating_range: tuple[float, float] = (-10.0, 10.0),
    min_shared: int = DEFAULT_MIN_SHARED,
    pair: tuple[str, str] | None = None,
) -> TrustScore:
    """Trust of the target in a participant over their co-rated items."""
    a = np.asarray(target_shared, dtype=float)
    b = np.asarray(participant_shared, dtype=float)
    if a.shape != b.shape:
        raise ValueError("co-rated lists must have equal length")
    if a.size < min_shared:
        raise InsufficientOverlapError(f"{a.size} co-rated items, need {min_shared}")
    stats = trust_stats(discretize(a, Z, rating_range), discretize(b, Z, rating_range), Z)
    if stats.H_a <= 0.0:
        raise UndefinedTrustError("target ratings fall in a single state")
    value = (stats.H_a - stats.H_a_given_b) / stats.H_a
    return TrustScore(float(min(1.0, max(0.0, value))), int(a.size), pair)


def degenerate_trust(target_shared, participant_shared, Z: int, rating_range) -> float:
    """Convention for a constant target: 1 if the participant sits in the same single state, else 0."""
    a = discretize(target_shared, Z, rating_range)
    b = discretize(participant_shared, Z, rating_range)
    return 1.0 if np.all(b == a[0]) and np.all(a == a[0]) else 0.0


def trust_or_convention(
    target_shared,
    participant_shared,
    Z: int = DEFAULT_STATES,
    rating_range: tuple[float, float] = (-10.0, 10.0),
    min_shared: int = DEFAULT_MIN_SHARED,
    pair: tuple[str, str] | None = None,
) -> TrustScore:
    """``compute_trust`` with the degenerate-target convention applied.

    Still raises :class:`InsufficientOverlapError`.
    """
    try:
        return compute_trust(target_shared, participant_shared, Z, rating_range, min_shared, pair)
    except UndefinedTrustError:
        value = degenerate_trust(target_shared, participant_shared, Z, rating_range)
        return TrustScore(value, len(target_shared), pair)


def filter_by_threshold(scores, theta: float) -> list:
    """Keep scores strictly above ``theta``, preserving order."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    return [s for s in scores if s.value > theta]


def trust_many(
    target_values,
    target_mask,
    values,
    mask,
    Z: int = DEFAULT_STATES,
    rating_range: tuple[float, float] = (-10.0, 10.0),
    min_shared: int = DEFAULT_MIN_SHARED,
) -> tuple[np.ndarray, np.ndarray]:
    """Trust of one target in every row of a matrix, vectorized.

    Returns ``(trust, n_shared)``; rows with too little overlap get NaN and
    constant-target rows follow :func:`degenerate_trust`.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    tmask = np.asarray(target_mask, dtype=bool)
    co = mask & tmask[None, :]
    n_shared = co.sum(axis=1)
    a_states = discretize(np.where(tmask, target_values, rating_range[0]), Z, rating_range)
    b_states = discretize(np.where(mask, values, rating_range[0]), Z, rating_range)
    rows, cols = np.nonzero(co)
    joint = np.zeros((values.shape[0], Z, Z))
    np.add.at(joint, (rows, a_states[cols], b_states[rows, cols]), 1.0)

    total = np.maximum(n_shared, 1).astype(float)

    def ent(c):
        p = c / total.reshape((-1,) + (1,) * (c.ndim - 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(c > 0, p * np.log2(np.where(c > 0, p, 1.0)), 0.0)
        return -terms.reshape(c.shape[0], -1).sum(axis=1)

    H_a = ent(joint.sum(axis=2))
    H_b = ent(joint.sum(axis=1))
    H_ab = ent(joint)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (H_a - (H_ab - H_b)) / H_a
    t = np.clip(t, 0.0, 1.0)
    degenerate = H_a <= 0.0
    if degenerate.any():
        for r in np.flatnonzero(degenerate & (n_shared > 0)):
            idx = np.flatnonzero(co[r])
            a = a_states[idx]
            b = b_states[r, idx]
            t[r] = 1.0 if np.all(a == a[0]) and np.all(b == a[0]) else 0.0
    t = np.where(n_shared >= min_shared, t, np.nan)
    return t, n_shared
