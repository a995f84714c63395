"""Counterfactual distributions and the convergence estimands.

Given a fitted per-category system, this module constructs the
treatment-at-zero counterfactual distribution and the local
perturbation of the treated distribution, and computes the four
headline estimands: the global and marginal total-variation effects and
their Kolmogorov (ordinal) counterparts.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Collection, Mapping, Sequence, Union

import numpy as np

from .core import (
    CategorySystemFit,
    EstimationError,
    Group,
    Panel,
    ResponseDistribution,
    ValidationError,
)
from .distances import TIE_TOL, kolmogorov_distance, tv_distance


@dataclass(frozen=True)
class MkdInterval:
    """Set-valued marginal Kolmogorov effect under argmax ties.

    When several cutoffs tie for the maximum CDF gap, the derivative of
    the max is only identified up to the interval spanned by the tied
    one-sided derivatives. ``degenerate`` marks the case of identical
    distributions, where even the sign is undefined.
    """

    low: float
    high: float
    cutoffs: tuple[int, ...] = ()
    degenerate: bool = False

    def __post_init__(self) -> None:
        if self.high < self.low:
            raise ValidationError("interval bounds out of order")

    @property
    def point(self) -> float:
        """Midpoint selection, equal to the value when the interval is a point."""
        return 0.5 * (self.low + self.high)


Mkd = Union[float, MkdInterval]


@dataclass(frozen=True)
class EstimandSet:
    """All convergence estimands for one question.

    ``delta_tv0``/``delta_kd0`` equal observed minus counterfactual by
    construction. ``mtvd_signs`` records the per-category comparison of
    treated vs reference shares that weights the slopes in the marginal
    total-variation effect.
    """

    tv_observed: float
    tv_counterfactual: float
    delta_tv0: float
    mtvd: float
    kd_observed: float
    kd_counterfactual: float
    delta_kd0: float
    mkd: Mkd
    mtvd_signs: tuple[int, ...]
    flags: tuple[str, ...] = ()

    def mkd_point(self) -> float:
        return self.mkd.point if isinstance(self.mkd, MkdInterval) else float(self.mkd)


def counterfactual_distribution(
    fit: CategorySystemFit, panel: Panel
) -> ResponseDistribution:
    """Treated-group distribution with the treatment fixed at zero.

    Averages the fitted family intercept vectors over the treated
    persons answering the fitted question, each person contributing
    their family's vector once. The result inherits "sums to one" from
    the per-family identity but may leave [0, 1]; it is returned
    unclipped with the ``proper`` flag reporting the violation.
    """
    rows = panel.for_question(fit.question_id, Group.TREATED)
    if not rows:
        raise ValidationError(
            f"no treated records for question {fit.question_id!r}"
        )
    missing = sorted(
        {r.person_id for r in rows if r.family_id not in fit.family_effects}
    )
    if missing:
        raise EstimationError(
            "counterfactual population not covered by the fit; persons from "
            f"dropped families: {missing}"
        )
    total = np.zeros(fit.n_categories)
    for r in rows:
        total += fit.family_effects[r.family_id]
    return ResponseDistribution(panel.scale, tuple(total / len(rows)))


def perturbed_distribution(
    base: ResponseDistribution, betas: Sequence[float], epsilon: float
) -> ResponseDistribution:
    """Shift every person's treatment by epsilon through the fitted slopes."""
    betas = np.asarray(list(betas), dtype=float)
    if betas.size != base.scale.size:
        raise ValidationError("slope vector length must match the scale")
    shifted = base.as_array() + epsilon * betas
    return ResponseDistribution(base.scale, tuple(shifted))


def mtvd_signs(
    p_treated: ResponseDistribution, p_reference: ResponseDistribution
) -> tuple[int, ...]:
    """Per-category comparison signs: +1 where treated >= reference."""
    if p_treated.scale != p_reference.scale:
        raise ValidationError("distributions live on different scales")
    return tuple(
        1 if t >= r else -1 for t, r in zip(p_treated.probs, p_reference.probs)
    )


def mtvd(
    p_treated: ResponseDistribution,
    p_reference: ResponseDistribution,
    betas: Sequence[float],
) -> float:
    """Marginal effect of the treatment on the total variation distance.

    Equals half the sign-weighted sum of the category slopes, where the
    sign is +1 for categories the treated group (weakly) over-selects
    relative to the reference group. Exact ties get +1; if a tied
    category carries a nonzero slope the derivative is one-sided there,
    which callers can detect via :func:`mtvd_has_kink`.
    """
    if not (p_treated.proper and p_reference.proper):
        raise ValidationError("mtvd requires proper base distributions")
    betas = np.asarray(list(betas), dtype=float)
    if betas.size != p_treated.scale.size:
        raise ValidationError("slope vector length must match the scale")
    signs = np.asarray(mtvd_signs(p_treated, p_reference), dtype=float)
    return 0.5 * float(signs @ betas)


def mtvd_has_kink(
    p_treated: ResponseDistribution,
    p_reference: ResponseDistribution,
    betas: Sequence[float],
) -> bool:
    """True when a category share tie meets a nonzero slope (TV kink)."""
    betas = np.asarray(list(betas), dtype=float)
    return any(
        t == r and b != 0.0
        for t, r, b in zip(p_treated.probs, p_reference.probs, betas)
    )


def delta_tv0(
    p_reference: ResponseDistribution,
    p_treated: ResponseDistribution,
    p_counterfactual: ResponseDistribution,
) -> float:
    """Reduction in TV distance when the counterfactual replaces the observed."""
    return tv_distance(p_reference, p_treated) - tv_distance(
        p_reference, p_counterfactual
    )


def delta_kd0(
    p_reference: ResponseDistribution,
    p_treated: ResponseDistribution,
    p_counterfactual: ResponseDistribution,
) -> float:
    """Kolmogorov analogue of :func:`delta_tv0`."""
    return (
        kolmogorov_distance(p_reference, p_treated).value
        - kolmogorov_distance(p_reference, p_counterfactual).value
    )


def mkd(
    p_treated: ResponseDistribution,
    p_reference: ResponseDistribution,
    betas: Sequence[float],
) -> Mkd:
    """Marginal effect of the treatment on the Kolmogorov distance.

    With G(k) the treated-minus-reference CDF gap and B(k) the
    cumulative slope, the derivative at a unique maximizing cutoff is
    sign(G(k*)) * B(k*). Ties produce the closed interval spanned by the
    tied candidates. If the distributions coincide (max |G| ~ 0) the
    derivative has no defined sign and the widest symmetric interval is
    returned with ``degenerate=True``.
    """
    if not (p_treated.proper and p_reference.proper):
        raise ValidationError("mkd requires proper base distributions")
    if p_treated.scale != p_reference.scale:
        raise ValidationError("distributions live on different scales")
    betas = np.asarray(list(betas), dtype=float)
    if betas.size != p_treated.scale.size:
        raise ValidationError("slope vector length must match the scale")
    gap = np.cumsum(p_treated.as_array() - p_reference.as_array())[:-1]
    cum_beta = np.cumsum(betas)[:-1]
    magnitude = np.abs(gap)
    peak = float(magnitude.max())
    if peak <= TIE_TOL:
        bound = float(np.abs(cum_beta).max())
        return MkdInterval(
            low=-bound,
            high=bound,
            cutoffs=tuple(range(1, p_treated.scale.size)),
            degenerate=True,
        )
    ties = np.flatnonzero(magnitude >= peak - TIE_TOL)
    candidates = np.sign(gap[ties]) * cum_beta[ties]
    low, high = float(candidates.min()), float(candidates.max())
    if low == high:
        return low
    return MkdInterval(
        low=low, high=high, cutoffs=tuple(int(k + 1) for k in ties)
    )


def compute_estimands(
    p_reference: ResponseDistribution,
    p_treated: ResponseDistribution,
    p_counterfactual: ResponseDistribution,
    betas: Sequence[float],
) -> EstimandSet:
    """Assemble the full estimand set for one question."""
    tv_obs = tv_distance(p_reference, p_treated)
    tv_cf = tv_distance(p_reference, p_counterfactual)
    kd_obs = kolmogorov_distance(p_reference, p_treated).value
    kd_cf = kolmogorov_distance(p_reference, p_counterfactual).value
    marginal_kd = mkd(p_treated, p_reference, betas)
    flags: list[str] = []
    if not p_counterfactual.proper:
        flags.append("counterfactual_improper")
    if mtvd_has_kink(p_treated, p_reference, betas):
        flags.append("mtvd_kink")
    if isinstance(marginal_kd, MkdInterval):
        flags.append("mkd_degenerate" if marginal_kd.degenerate else "mkd_interval")
    return EstimandSet(
        tv_observed=tv_obs,
        tv_counterfactual=tv_cf,
        delta_tv0=tv_obs - tv_cf,
        mtvd=mtvd(p_treated, p_reference, betas),
        kd_observed=kd_obs,
        kd_counterfactual=kd_cf,
        delta_kd0=kd_obs - kd_cf,
        mkd=marginal_kd,
        mtvd_signs=mtvd_signs(p_treated, p_reference),
        flags=tuple(flags),
    )


def heterogeneity_split(
    panel: Panel,
    rule: str,
    country_table: Mapping[str, float] | Collection[str],
) -> tuple[Panel, Panel]:
    """Partition the treated group by origin country.

    ``rule='region_list'`` splits on membership in ``country_table``
    (a collection of country codes); ``rule='median_country_distance'``
    splits at the person-weighted median of the supplied code->distance
    mapping, with strictly-below-median countries in the first panel.
    Reference records are duplicated into both partitions.
    """
    treated = [r for r in panel.records if r.group is Group.TREATED]
    reference = [r for r in panel.records if r.group is Group.REFERENCE]
    missing = sorted({r.person_id for r in treated if r.country_code is None})
    if missing:
        raise ValidationError(
            f"treated records without a country code: {missing}"
        )

    if rule == "region_list":
        region = {str(c) for c in country_table}
        in_first = lambda code: code in region  # noqa: E731
    elif rule == "median_country_distance":
        if not isinstance(country_table, Mapping):
            raise ValidationError(
                "median_country_distance needs a code->distance mapping"
            )
        table = {str(c): float(d) for c, d in country_table.items()}
        uncovered = sorted(
            {r.country_code for r in treated if r.country_code not in table}
        )
        if uncovered:
            raise ValidationError(f"country codes without a distance: {uncovered}")
        person_codes: dict[str, str] = {}
        for r in treated:
            prev = person_codes.setdefault(r.person_id, r.country_code)
            if prev != r.country_code:
                raise ValidationError(
                    f"person {r.person_id!r} has inconsistent country codes"
                )
        median = float(np.median([table[c] for c in person_codes.values()]))
        in_first = lambda code: table[code] < median  # noqa: E731
    else:
        raise ValidationError(
            f"unknown split rule {rule!r}; use 'region_list' or "
            "'median_country_distance'"
        )

    first = [r for r in treated if in_first(r.country_code)]
    second = [r for r in treated if not in_first(r.country_code)]
    for side, rows in (("first", first), ("second", second)):
        if not rows:
            warnings.warn(
                f"heterogeneity split left the {side} partition without "
                "treated records",
                UserWarning,
                stacklevel=2,
            )
    return (
        panel.with_records(first + reference),
        panel.with_records(second + reference),
    )
