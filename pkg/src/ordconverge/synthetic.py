"""Synthetic sibling panels with fully known ground truth.

The generator mimics the identifying variation of the sibling design: a
family draws one migration offset, siblings draw staggered birth
offsets, and each sibling's treatment is the (floored at zero) gap
between the two. Category probabilities follow the linear system
``gamma_f + treatment * beta`` exactly, so every population estimand has
a closed form and the module doubles as the oracle for estimator
recovery tests.

An optional confounding knob tilts family effects toward late-migrating
families; pooled OLS is then biased while the within estimator is not,
which is the textbook rationale for the fixed-effects design.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    EstimationError,
    Group,
    OrdinalScale,
    Panel,
    RespondentRecord,
    ResponseDistribution,
    ValidationError,
)
from .estimands import EstimandSet, compute_estimands

_WAVE = "w1"


def _default_labels(k: int) -> tuple[str, ...]:
    return tuple(f"cat{i}" for i in range(1, k + 1))


@dataclass(frozen=True)
class SyntheticConfig:
    """A fully specified data-generating process.

    ``family_effect_base`` is the population mean of the family effect
    vectors; families deviate from it by a Dirichlet draw shrunk by
    ``family_effect_spread``. Validity (all category probabilities stay
    in [0, 1] over the whole treatment support) is checked by interval
    arithmetic at construction.
    """

    n_families: int
    true_betas: tuple[float, ...]
    family_effect_base: tuple[float, ...]
    reference_distribution: tuple[float, ...]
    seed: int
    n_reference_families: int | None = None
    sibs_per_family: tuple[tuple[int, float], ...] = ((2, 0.5), (3, 0.3), (4, 0.2))
    family_effect_spread: float = 0.25
    family_effect_concentration: float = 50.0
    migration_offset_max: int = 10
    birth_spread_max: int = 6
    confounding: float = 0.0
    confound_direction: tuple[float, ...] | None = None
    question_id: str = "q1"
    scale_labels: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        betas = tuple(float(b) for b in self.true_betas)
        base = tuple(float(v) for v in self.family_effect_base)
        ref = tuple(float(v) for v in self.reference_distribution)
        object.__setattr__(self, "true_betas", betas)
        object.__setattr__(self, "family_effect_base", base)
        object.__setattr__(self, "reference_distribution", ref)
        labels = tuple(self.scale_labels) or _default_labels(len(base))
        object.__setattr__(self, "scale_labels", labels)
        object.__setattr__(
            self, "sibs_per_family", tuple((int(n), float(p)) for n, p in self.sibs_per_family)
        )
        if self.confound_direction is not None:
            object.__setattr__(
                self, "confound_direction", tuple(float(v) for v in self.confound_direction)
            )
        self._validate()

    # -- validation -----------------------------------------------------

    def _validate(self) -> None:
        k = len(self.family_effect_base)
        if k < 2:
            raise ValidationError("need at least two categories")
        if len(self.scale_labels) != k:
            raise ValidationError("scale_labels length must match the base vector")
        if len(self.true_betas) != k or len(self.reference_distribution) != k:
            raise ValidationError("beta and reference vectors must match the base length")
        if abs(math.fsum(self.true_betas)) > 1e-12:
            raise ValidationError("true_betas must sum to zero")
        if abs(math.fsum(self.family_effect_base) - 1.0) > 1e-9:
            raise ValidationError("family_effect_base must sum to one")
        if any(not 0.0 < v < 1.0 for v in self.family_effect_base):
            raise ValidationError("family_effect_base must lie in the open simplex")
        if abs(math.fsum(self.reference_distribution) - 1.0) > 1e-9:
            raise ValidationError("reference_distribution must sum to one")
        if any(v < 0 for v in self.reference_distribution):
            raise ValidationError("reference_distribution must be proper")
        if self.n_families < 2:
            raise ValidationError("need at least two treated families")
        if not 0.0 <= self.family_effect_spread < 1.0:
            raise ValidationError("family_effect_spread must lie in [0, 1)")
        if self.family_effect_concentration <= 0:
            raise ValidationError("family_effect_concentration must be positive")
        if self.migration_offset_max < 1 or self.birth_spread_max < 0:
            raise ValidationError("offset bounds must allow treatment variation")
        if not self.sibs_per_family:
            raise ValidationError("sibs_per_family must not be empty")
        if abs(math.fsum(p for _, p in self.sibs_per_family) - 1.0) > 1e-9:
            raise ValidationError("sibling-count probabilities must sum to one")
        if any(n < 1 or p < 0 for n, p in self.sibs_per_family):
            raise ValidationError("sibling counts must be >= 1 with nonneg probs")
        direction = self._direction()
        if abs(math.fsum(direction)) > 1e-12:
            raise ValidationError("confound_direction must sum to zero")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        # interval arithmetic: gamma + t*beta must stay in [0, 1] for
        # every attainable gamma and every t in [0, migration_offset_max]
        lam = self.family_effect_spread
        t_max = float(self.migration_offset_max)
        for a in range(k):
            shift_lo, shift_hi = self._confound_bounds(direction[a])
            gam_lo = (1 - lam) * (self.family_effect_base[a] + shift_lo)
            gam_hi = (1 - lam) * (self.family_effect_base[a] + shift_hi) + lam
            lo = gam_lo + min(0.0, self.true_betas[a] * t_max)
            hi = gam_hi + max(0.0, self.true_betas[a] * t_max)
            if lo < 0.0 or hi > 1.0:
                raise ValidationError(
                    f"category {a + 1} probability range [{lo:.4f}, {hi:.4f}] "
                    "exits [0, 1]; shrink betas, spread, or confounding"
                )

    def _direction(self) -> tuple[float, ...]:
        if self.confound_direction is not None:
            return self.confound_direction
        k = len(self.family_effect_base)
        d = [0.0] * k
        d[0], d[-1] = 1.0, -1.0
        return tuple(d)

    def _confound_bounds(self, direction_a: float) -> tuple[float, float]:
        # centered migration share m/M - 1/2 ranges over [-1/2, 1/2]
        extent = abs(self.confounding * direction_a) * 0.5
        return -extent, extent

    # -- derived population quantities ----------------------------------

    @property
    def scale(self) -> OrdinalScale:
        return OrdinalScale(self.scale_labels)

    @property
    def n_categories(self) -> int:
        return len(self.family_effect_base)

    def mean_treatment(self) -> float:
        """Exact E[max(0, m - b)] over the independent uniform offsets."""
        m_max, b_max = self.migration_offset_max, self.birth_spread_max
        total = sum(
            max(0, m - b) for m in range(m_max + 1) for b in range(b_max + 1)
        )
        return total / ((m_max + 1) * (b_max + 1))

    def mean_score_beta(self) -> float:
        """Slope of the coded mean implied by the category slopes."""
        return float(
            sum(c * b for c, b in zip(self.scale.codes, self.true_betas))
        )

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SyntheticConfig":
        """Build from a parsed declarative config (JSON-style mapping)."""
        known = {
            "n_families",
            "n_reference_families",
            "sibs_per_family",
            "true_betas",
            "family_effect_base",
            "family_effect_spread",
            "family_effect_concentration",
            "migration_offset_max",
            "birth_spread_max",
            "reference_distribution",
            "confounding",
            "confound_direction",
            "seed",
            "question_id",
            "scale_labels",
        }
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown synthetic config keys: {unknown}")
        kwargs = dict(data)
        sibs = kwargs.get("sibs_per_family")
        if isinstance(sibs, Mapping):
            kwargs["sibs_per_family"] = tuple(
                (int(n), float(p)) for n, p in sorted(sibs.items(), key=lambda kv: int(kv[0]))
            )
        for key in ("true_betas", "family_effect_base", "reference_distribution",
                    "confound_direction", "scale_labels"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class SyntheticTruth:
    """Ground truth accompanying a generated panel."""

    betas: tuple[float, ...]
    mean_treatment: float
    p_treated: ResponseDistribution
    p_counterfactual: ResponseDistribution
    p_reference: ResponseDistribution
    mean_score_beta: float
    estimands: EstimandSet
    family_effects: Mapping[str, tuple[float, ...]]


def true_estimands(config: SyntheticConfig) -> EstimandSet:
    """Population (infinite-sample) values of every estimand."""
    scale = config.scale
    base = np.asarray(config.family_effect_base)
    betas = np.asarray(config.true_betas)
    p_cf = ResponseDistribution(scale, tuple(base))
    p_treated = ResponseDistribution(
        scale, tuple(base + config.mean_treatment() * betas)
    )
    p_reference = ResponseDistribution(scale, config.reference_distribution)
    return compute_estimands(p_reference, p_treated, p_cf, betas)


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    u = rng.random()
    return int(np.searchsorted(np.cumsum(probs), u, side="right")) + 1


def _draw_size(rng: np.random.Generator, sibs: Sequence[tuple[int, float]]) -> int:
    u = rng.random()
    acc = 0.0
    for n, p in sibs:
        acc += p
        if u < acc:
            return n
    return sibs[-1][0]


def generate_panel(config: SyntheticConfig) -> tuple[Panel, SyntheticTruth]:
    """Draw one panel from the configured process.

    Deterministic given the seed; each family consumes its own derived
    random stream, so generation order (or parallel generation across
    families) cannot change the draw.
    """
    scale = config.scale
    k = config.n_categories
    base = np.asarray(config.family_effect_base)
    betas = np.asarray(config.true_betas)
    lam = config.family_effect_spread
    conc = config.family_effect_concentration
    direction = np.asarray(config._direction())
    m_max = config.migration_offset_max
    records: list[RespondentRecord] = []
    family_effects: dict[str, tuple[float, ...]] = {}

    for fi in range(config.n_families):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0, fi]))
        fam = f"t{fi:06d}"
        size = _draw_size(rng, config.sibs_per_family)
        m_offset = int(rng.integers(0, m_max + 1))
        shift = config.confounding * (m_offset / m_max - 0.5) * direction
        gamma = (1 - lam) * (base + shift) + lam * rng.dirichlet(conc * base)
        family_effects[fam] = tuple(float(g) for g in gamma)
        births = [int(rng.integers(0, config.birth_spread_max + 1)) for _ in range(size)]
        eldest = births.index(min(births))
        for s in range(size):
            treatment = float(max(0, m_offset - births[s]))
            probs = gamma + treatment * betas
            if probs.min() < 0 or probs.max() > 1:
                raise EstimationError(
                    "draw-time category probability left [0, 1]; the config "
                    "validation should have rejected this process"
                )
            records.append(
                RespondentRecord(
                    person_id=f"{fam}p{s}",
                    family_id=fam,
                    group=Group.TREATED,
                    question_id=config.question_id,
                    response=_categorical(rng, probs),
                    treatment=treatment,
                    sex=int(rng.integers(0, 2)),
                    oldest=int(s == eldest),
                    age_at_interview=18 + (config.birth_spread_max - births[s]),
                    wave=_WAVE,
                )
            )

    ref_probs = np.asarray(config.reference_distribution)
    n_ref = config.n_reference_families or config.n_families
    for fi in range(n_ref):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, fi]))
        fam = f"r{fi:06d}"
        size = _draw_size(rng, config.sibs_per_family)
        births = [int(rng.integers(0, config.birth_spread_max + 1)) for _ in range(size)]
        eldest = births.index(min(births))
        for s in range(size):
            records.append(
                RespondentRecord(
                    person_id=f"{fam}p{s}",
                    family_id=fam,
                    group=Group.REFERENCE,
                    question_id=config.question_id,
                    response=_categorical(rng, ref_probs),
                    treatment=None,
                    sex=int(rng.integers(0, 2)),
                    oldest=int(s == eldest),
                    age_at_interview=18 + (config.birth_spread_max - births[s]),
                    wave=_WAVE,
                )
            )

    panel = Panel(records=tuple(records), scale=scale, wave_order=(_WAVE,))
    estimands = true_estimands(config)
    truth = SyntheticTruth(
        betas=config.true_betas,
        mean_treatment=config.mean_treatment(),
        p_treated=ResponseDistribution(
            scale, tuple(base + config.mean_treatment() * betas)
        ),
        p_counterfactual=ResponseDistribution(scale, tuple(base)),
        p_reference=ResponseDistribution(scale, config.reference_distribution),
        mean_score_beta=config.mean_score_beta(),
        estimands=estimands,
        family_effects=family_effects,
    )
    return panel, truth
