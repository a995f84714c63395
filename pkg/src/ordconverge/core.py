"""Core domain types: scales, distributions, respondent panels, fitted systems.

All types are immutable value objects; they can be shared freely across
parallel workers. Estimation and distance logic lives in the sibling
modules, which consume these types.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

#: Tolerance for "probabilities sum to one" checks on distributions.
SUM_TOL = 1e-9

#: Tolerance for the adding-up identities of a fitted category system.
ADDING_UP_TOL = 1e-8


class ValidationError(ValueError):
    """Input data or configuration violates a documented contract."""


class EstimationError(RuntimeError):
    """Estimation cannot proceed on the given data (rank, coverage, ...)."""


class Group(str, Enum):
    """Which of the two compared populations a respondent belongs to."""

    TREATED = "treated"
    REFERENCE = "reference"

    @classmethod
    def coerce(cls, value: "Group | str") -> "Group":
        if isinstance(value, Group):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(
                f"group must be 'treated' or 'reference', got {value!r}"
            ) from None


@dataclass(frozen=True)
class OrdinalScale:
    """An ordered answer space with K >= 2 categories coded 1..K.

    The order is semantic: code 1 is the strongest-agreement end of the
    scale and code K the strongest-disagreement end. Codes are assigned
    in label order and never inferred from data.
    """

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        labels = tuple(str(lab) for lab in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValidationError("an ordinal scale needs at least two categories")
        if len(set(labels)) != len(labels):
            raise ValidationError("scale labels must be unique")

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(range(1, len(self.labels) + 1))

    def label_of(self, code: int) -> str:
        if not 1 <= code <= self.size:
            raise ValidationError(f"code {code} outside 1..{self.size}")
        return self.labels[code - 1]

    def code_of(self, label: str) -> int:
        try:
            return self.labels.index(label) + 1
        except ValueError:
            raise ValidationError(f"unknown category label {label!r}") from None


@dataclass(frozen=True)
class ResponseDistribution:
    """A vector of category masses over an :class:`OrdinalScale`.

    The masses must sum to one (within ``SUM_TOL``). ``proper`` is True
    only when every entry lies in [0, 1]; counterfactual distributions
    produced by a linear probability system may leave that range and are
    deliberately carried unclipped with ``proper=False``.
    """

    scale: OrdinalScale
    probs: tuple[float, ...]
    proper: bool = field(init=False)

    def __post_init__(self) -> None:
        probs = tuple(float(v) for v in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) != self.scale.size:
            raise ValidationError(
                f"distribution has {len(probs)} entries for a "
                f"{self.scale.size}-category scale"
            )
        if not all(math.isfinite(v) for v in probs):
            raise ValidationError("distribution entries must be finite")
        total = math.fsum(probs)
        if abs(total - 1.0) > SUM_TOL:
            raise ValidationError(f"distribution sums to {total!r}, expected 1")
        object.__setattr__(
            self, "proper", all(0.0 <= v <= 1.0 for v in probs)
        )

    @classmethod
    def from_counts(cls, scale: OrdinalScale, counts: Sequence[float]) -> "ResponseDistribution":
        total = float(sum(counts))
        if total <= 0:
            raise ValidationError("counts must have positive total")
        return cls(scale, tuple(c / total for c in counts))

    @classmethod
    def from_shares(cls, scale: OrdinalScale, shares: Sequence[float]) -> "ResponseDistribution":
        """Build from published (possibly rounded) shares, normalizing the sum.

        Rounded tables often sum to 0.99 or 1.01; normalizing restores a
        valid distribution without altering relative masses.
        """
        if any(s < 0 for s in shares):
            raise ValidationError("shares must be nonnegative")
        return cls.from_counts(scale, shares)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def cdf(self) -> tuple[float, ...]:
        out, acc = [], 0.0
        for v in self.probs:
            acc += v
            out.append(acc)
        return tuple(out)

    def mean_code(self) -> float:
        """Expected numeric code (1..K) under this distribution."""
        return float(sum(c * p for c, p in zip(self.scale.codes, self.probs)))


@dataclass(frozen=True)
class RespondentRecord:
    """One person-question observation.

    ``treatment`` is the continuous exposure (age at arrival in the
    motivating application); it must be present exactly for treated
    respondents. ``wave`` identifies the survey round the answer comes
    from and is interpreted through the panel's wave order.
    """

    person_id: str
    family_id: str
    group: Group
    question_id: str
    response: int
    treatment: float | None
    sex: int
    oldest: int
    age_at_interview: int
    wave: str
    country_code: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "group", Group.coerce(self.group))
        object.__setattr__(self, "person_id", str(self.person_id))
        object.__setattr__(self, "family_id", str(self.family_id))
        object.__setattr__(self, "question_id", str(self.question_id))
        if self.group is Group.TREATED:
            if self.treatment is None:
                raise ValidationError(
                    f"treated respondent {self.person_id!r} is missing a treatment value"
                )
            if not (math.isfinite(self.treatment) and self.treatment >= 0):
                raise ValidationError(
                    f"treatment must be a finite nonnegative real, got {self.treatment!r}"
                )
        elif self.treatment is not None:
            raise ValidationError(
                f"reference respondent {self.person_id!r} carries a treatment value"
            )
        if not isinstance(self.response, int) or self.response < 1:
            raise ValidationError(f"response code must be a positive integer, got {self.response!r}")
        if self.sex not in (0, 1):
            raise ValidationError(f"sex must be 0/1, got {self.sex!r}")
        if self.oldest not in (0, 1):
            raise ValidationError(f"oldest must be 0/1, got {self.oldest!r}")


@dataclass(frozen=True)
class Panel:
    """A collection of respondent records sharing one scale and wave order.

    A panel may hold several waves per (person, question) until
    :func:`dedupe_most_recent` is applied. Wave recency is defined by
    ``wave_order`` (earliest first); a record whose wave is not listed is
    rejected rather than ordered lexicographically.
    """

    records: tuple[RespondentRecord, ...]
    scale: OrdinalScale
    wave_order: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "wave_order", tuple(str(w) for w in self.wave_order))
        if not self.wave_order:
            raise ValidationError("wave_order must list at least one wave")
        if len(set(self.wave_order)) != len(self.wave_order):
            raise ValidationError("wave_order entries must be unique")
        known = set(self.wave_order)
        for rec in self.records:
            if rec.response > self.scale.size:
                raise ValidationError(
                    f"response {rec.response} for person {rec.person_id!r} exceeds "
                    f"scale size {self.scale.size}"
                )
            if rec.wave not in known:
                raise ValidationError(
                    f"wave {rec.wave!r} for person {rec.person_id!r} is not in the "
                    f"configured wave order {self.wave_order}"
                )

    @cached_property
    def questions(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for rec in self.records:
            seen.setdefault(rec.question_id, None)
        return tuple(seen)

    @cached_property
    def family_ids(self) -> tuple[str, ...]:
        return tuple(sorted({rec.family_id for rec in self.records}))

    @property
    def wave_rank(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.wave_order)}

    def with_records(self, records: Iterable[RespondentRecord]) -> "Panel":
        return replace(self, records=tuple(records))

    def for_question(
        self, question_id: str, group: Group | str | None = None
    ) -> tuple[RespondentRecord, ...]:
        if group is not None:
            group = Group.coerce(group)
        return tuple(
            rec
            for rec in self.records
            if rec.question_id == question_id and (group is None or rec.group is group)
        )


@dataclass(frozen=True)
class CategorySystemFit:
    """Per-category slopes and family intercepts from the LPM system.

    Fitting the K category indicators against an identical design forces
    two algebraic identities, enforced here at construction: the slopes
    sum to zero across categories and every family's intercepts sum to
    one, so the implied level-zero counterfactual is a distribution.
    """

    question_id: str
    betas: np.ndarray
    cluster_se: np.ndarray
    family_effects: Mapping[str, np.ndarray]
    n_obs: int
    n_families: int
    degenerate_categories: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=float)
        betas.flags.writeable = False
        object.__setattr__(self, "betas", betas)
        se = np.asarray(self.cluster_se, dtype=float)
        se.flags.writeable = False
        object.__setattr__(self, "cluster_se", se)
        if betas.shape != se.shape:
            raise ValidationError("betas and cluster_se must have equal length")
        if abs(float(betas.sum())) > ADDING_UP_TOL:
            raise ValidationError(
                f"category slopes sum to {betas.sum()!r}; the adding-up identity requires 0"
            )
        effects = {}
        for fam, gam in self.family_effects.items():
            gam = np.asarray(gam, dtype=float)
            if gam.shape != betas.shape:
                raise ValidationError(f"family {fam!r} effects have wrong length")
            if abs(float(gam.sum()) - 1.0) > ADDING_UP_TOL:
                raise ValidationError(
                    f"family {fam!r} effects sum to {gam.sum()!r}; expected 1"
                )
            gam.flags.writeable = False
            effects[fam] = gam
        object.__setattr__(self, "family_effects", effects)

    @property
    def n_categories(self) -> int:
        return int(self.betas.size)


def dedupe_most_recent(panel: Panel) -> Panel:
    """Keep one record per (person, question): the latest-wave answer.

    Two records for the same (person, question, wave) are a data defect
    and raise rather than being silently merged; the survey never
    produces same-wave duplicates, so there is no recency rule for them.
    """
    rank = panel.wave_rank
    best: dict[tuple[str, str], RespondentRecord] = {}
    seen: set[tuple[str, str, str]] = set()
    for rec in panel.records:
        key3 = (rec.person_id, rec.question_id, rec.wave)
        if key3 in seen:
            raise ValidationError(
                f"duplicate record for person {rec.person_id!r}, question "
                f"{rec.question_id!r}, wave {rec.wave!r}"
            )
        seen.add(key3)
        key = (rec.person_id, rec.question_id)
        current = best.get(key)
        if current is None or rank[rec.wave] > rank[current.wave]:
            best[key] = rec
    keep = {id(rec) for rec in best.values()}
    return panel.with_records(rec for rec in panel.records if id(rec) in keep)


def empirical_distribution(
    panel: Panel, question_id: str, group: Group | str
) -> ResponseDistribution:
    """Observed response shares for one (question, group) cell."""
    group = Group.coerce(group)
    recs = panel.for_question(question_id, group)
    if not recs:
        raise ValidationError(
            f"no records for question {question_id!r} in group {group.value!r}"
        )
    counts = np.zeros(panel.scale.size, dtype=float)
    for rec in recs:
        counts[rec.response - 1] += 1.0
    return ResponseDistribution(panel.scale, tuple(counts / len(recs)))


def sibling_subpanel(panel: Panel, question_id: str) -> Panel:
    """Restrict one question to its estimation sample.

    Keeps treated records from families with at least two answers to the
    question (the within-family design has no identifying variation in
    smaller families) together with all reference records for the
    question. Records for other questions are dropped.
    """
    treated = panel.for_question(question_id, Group.TREATED)
    reference = panel.for_question(question_id, Group.REFERENCE)
    counts: dict[str, int] = {}
    for rec in treated:
        counts[rec.family_id] = counts.get(rec.family_id, 0) + 1
    kept_families = {fam for fam, n in counts.items() if n >= 2}
    records = [rec for rec in treated if rec.family_id in kept_families]
    records.extend(reference)
    order = {id(rec): i for i, rec in enumerate(panel.records)}
    records.sort(key=lambda rec: order[id(rec)])
    return panel.with_records(records)
