"""Distribution distances and their brute-force supremum counterparts.

The library leans on three equivalences, each implemented from both
sides so that tests can confirm them numerically:

* total variation = the largest mean-score gap attainable by any
  scoring rule with values in [0, 1] (``wcad_bruteforce``);
* total variation = the smallest mismatch probability over couplings
  (``min_coupling_mismatch``);
* the Kolmogorov distance = the same supremum restricted to monotone
  scoring rules (``owcad_bruteforce``).

Because the mean-score gap is linear in the rule, the suprema are
attained at extreme points: 0/1 indicator rules for the bounded class,
threshold rules for the monotone class. The brute-force functions
enumerate those extreme points exactly and return a witness.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import ResponseDistribution, ValidationError

#: Largest K for which subset enumeration is allowed (2**K rules).
ENUMERATION_BOUND = 20

#: Cutoffs within this tolerance of the maximum CDF gap count as ties.
TIE_TOL = 1e-12

#: Plain vectors may be rounded published shares; allow this slack on
#: their sum. ResponseDistribution inputs are validated at construction
#: and bypass this check.
RAW_SUM_TOL = 0.02

Distribution = Union[ResponseDistribution, Sequence[float]]


@dataclass(frozen=True)
class ScoringRule:
    """A bounded recoding of the categories: values in [0, 1] per code."""

    values: tuple[float, ...]
    monotone: bool = False

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValidationError("scoring rule values must lie in [0, 1]")
        if self.monotone and any(
            b < a for a, b in zip(values, values[1:])
        ):
            raise ValidationError("monotone scoring rule must be nondecreasing")

    def expectation(self, probs: Sequence[float]) -> float:
        return float(np.dot(np.asarray(self.values), np.asarray(probs, dtype=float)))


@dataclass(frozen=True)
class DistanceResult:
    """A distance value with the witness that attains it.

    ``witness`` is either a category-code subset (bounded rules) or a
    :class:`ScoringRule` (monotone rules). ``argmax_cutoffs`` lists every
    CDF cutoff attaining a Kolmogorov-type maximum, ties included.
    """

    value: float
    witness: tuple[int, ...] | ScoringRule | None = None
    argmax_cutoffs: tuple[int, ...] | None = None


def _as_vector(dist: Distribution, *, proper: bool, strict_sum: bool) -> np.ndarray:
    if isinstance(dist, ResponseDistribution):
        if proper and not dist.proper:
            raise ValidationError("operation requires a proper distribution")
        return dist.as_array()
    vec = np.asarray(list(dist), dtype=float)
    if vec.ndim != 1 or vec.size < 2:
        raise ValidationError("distribution vector must be 1-d with length >= 2")
    if not np.all(np.isfinite(vec)):
        raise ValidationError("distribution entries must be finite")
    tol = 1e-9 if strict_sum else RAW_SUM_TOL
    if abs(float(vec.sum()) - 1.0) > tol:
        raise ValidationError(f"distribution sums to {vec.sum()!r}, expected 1")
    if proper and not np.all((vec >= -1e-12) & (vec <= 1 + 1e-12)):
        raise ValidationError("operation requires entries in [0, 1]")
    return vec


def _pair(
    p: Distribution, q: Distribution, *, proper: bool = False, strict_sum: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, ResponseDistribution) and isinstance(q, ResponseDistribution):
        if p.scale != q.scale:
            raise ValidationError("distributions live on different scales")
    vp = _as_vector(p, proper=proper, strict_sum=strict_sum)
    vq = _as_vector(q, proper=proper, strict_sum=strict_sum)
    if vp.size != vq.size:
        raise ValidationError(
            f"distribution lengths differ: {vp.size} vs {vq.size}"
        )
    return vp, vq


def tv_distance(p: Distribution, q: Distribution) -> float:
    """Total variation distance: half the sum of absolute differences.

    Accepts improper vectors as long as each sums to one; the half-L1
    formula applies to any signed pair on a common support.
    """
    vp, vq = _pair(p, q)
    return 0.5 * float(np.abs(vp - vq).sum())


def wcad_bruteforce(p: Distribution, q: Distribution) -> DistanceResult:
    """Worst-case average difference over all [0, 1]-valued scoring rules.

    Enumerates the 2**K indicator rules (the extreme points of the
    bounded class, which attain the supremum of a linear objective) and
    returns the gap together with the maximizing category subset. The
    first subset in mask order attaining the maximum signed gap is
    reported, so the witness only contains categories where p >= q up to
    ties.
    """
    vp, vq = _pair(p, q, proper=True)
    k = vp.size
    if k > ENUMERATION_BOUND:
        raise ValidationError(
            f"subset enumeration is capped at K={ENUMERATION_BOUND}, got K={k}"
        )
    diff = vp - vq
    masks = (np.arange(1 << k)[:, None] >> np.arange(k)) & 1
    gaps = masks @ diff
    best = int(np.argmax(gaps))
    codes = tuple(int(a + 1) for a in range(k) if (best >> a) & 1)
    return DistanceResult(value=float(gaps[best]), witness=codes)


def min_coupling_mismatch(p: Distribution, q: Distribution) -> float:
    """Smallest mismatch probability over couplings of p and q.

    Equals 1 - sum_a min(p_a, q_a): the optimal coupling keeps as much
    mass as possible on the diagonal, so only the excess must move.
    """
    vp, vq = _pair(p, q, proper=True)
    return 1.0 - float(np.minimum(vp, vq).sum())


def kolmogorov_distance(p: Distribution, q: Distribution) -> DistanceResult:
    """Largest absolute gap between the two cumulative distributions.

    The maximum runs over cutoffs k = 1..K-1 (the gap at K is zero by
    construction when both vectors sum to one). All cutoffs within
    ``TIE_TOL`` of the maximum are reported.
    """
    vp, vq = _pair(p, q)
    gaps = np.abs(np.cumsum(vp - vq))[:-1]
    value = float(gaps.max())
    cutoffs = tuple(int(i + 1) for i in np.flatnonzero(gaps >= value - TIE_TOL))
    return DistanceResult(value=value, argmax_cutoffs=cutoffs)


def owcad_bruteforce(p: Distribution, q: Distribution) -> DistanceResult:
    """Worst-case average difference over monotone [0, 1] scoring rules.

    The extreme points of the monotone class are the K-1 threshold rules
    h_k(a) = 1{a > k}; enumerating them makes the equality with the
    Kolmogorov distance checkable to machine precision. The witness is
    the threshold rule at the smallest maximizing cutoff.
    """
    vp, vq = _pair(p, q, proper=True)
    k = vp.size
    if k > ENUMERATION_BOUND:
        raise ValidationError(
            f"threshold enumeration is capped at K={ENUMERATION_BOUND}, got K={k}"
        )
    gaps = np.abs(np.cumsum(vp - vq))[:-1]
    value = float(gaps.max())
    ties = tuple(int(i + 1) for i in np.flatnonzero(gaps >= value - TIE_TOL))
    cut = ties[0]
    rule = ScoringRule(
        values=tuple(1.0 if code > cut else 0.0 for code in range(1, k + 1)),
        monotone=True,
    )
    return DistanceResult(value=value, witness=rule, argmax_cutoffs=ties)


def country_distance(means_a: Sequence[float], means_b: Sequence[float]) -> float:
    """Euclidean distance between two mean-response vectors."""
    a = np.asarray(list(means_a), dtype=float)
    b = np.asarray(list(means_b), dtype=float)
    if a.ndim != 1 or a.size < 1:
        raise ValidationError("mean vectors must be 1-d with length >= 1")
    if a.shape != b.shape:
        raise ValidationError(f"mean vector lengths differ: {a.size} vs {b.size}")
    return float(np.sqrt(((a - b) ** 2).sum()))
