"""Family-block bootstrap with deterministic, parallel-safe replication.

Families are the resampling unit: each replicate redraws whole families
with replacement within each group, relabeling every drawn copy with a
fresh synthetic id so duplicated families demean independently.
Replicate seeds derive from the run seed and the replicate index through
``numpy.random.SeedSequence([seed, index])``, so results are
bit-identical regardless of how many workers execute the replicates.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .core import EstimationError, Group, Panel, ValidationError


@dataclass(frozen=True)
class BootstrapFailure:
    replicate: int
    reason: str


@dataclass(frozen=True)
class BootstrapRun:
    """Replicate statistics plus nearest-rank percentile intervals.

    ``statistics`` stacks the successful replicates (in replicate-index
    order); failed replicates are counted and described, never silently
    dropped. ``degenerate_replicates`` counts replicates in which some
    response category vanished from a treated question cell, which the
    category-system fit handles with the exact-zero convention.
    """

    statistics: np.ndarray
    replicate_indices: tuple[int, ...]
    seed: int
    n_replicates: int
    ci_level: float
    failures: tuple[BootstrapFailure, ...]
    degenerate_replicates: int
    ci_low: np.ndarray
    ci_high: np.ndarray

    @property
    def n_failures(self) -> int:
        return len(self.failures)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """The generator that drives one replicate, independent of all others."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def nearest_rank(quantile: float, n: int) -> int:
    """1-based nearest-rank order statistic for a quantile in (0, 1)."""
    if not 0.0 < quantile < 1.0:
        raise ValidationError("quantile must lie strictly between 0 and 1")
    raw = quantile * n
    rounded = round(raw)
    rank = rounded if abs(raw - rounded) <= 1e-9 * max(n, 1) else math.ceil(raw)
    return min(max(int(rank), 1), n)


def _grouped_families(panel: Panel) -> dict[Group, tuple[str, ...]]:
    by_family: dict[str, set[Group]] = {}
    for rec in panel.records:
        by_family.setdefault(rec.family_id, set()).add(rec.group)
    mixed = sorted(f for f, groups in by_family.items() if len(groups) > 1)
    if mixed:
        raise ValidationError(
            f"families spanning both groups cannot be resampled: {mixed}"
        )
    out: dict[Group, list[str]] = {Group.TREATED: [], Group.REFERENCE: []}
    for fam in sorted(by_family):
        out[next(iter(by_family[fam]))].append(fam)
    return {g: tuple(f) for g, f in out.items()}


def resample_panel(
    panel: Panel, rng: np.random.Generator, *, hold_reference: bool = False
) -> Panel:
    """One with-replacement family redraw of the panel.

    Treated families are always redrawn; reference families are redrawn
    too unless ``hold_reference`` keeps the reference group fixed. Each
    drawn copy gets a synthetic family id (and person ids) suffixed with
    its draw position, preserving the within-family record structure.
    """
    groups = _grouped_families(panel)
    records_by_family: dict[str, list] = {}
    for rec in panel.records:
        records_by_family.setdefault(rec.family_id, []).append(rec)

    new_records = []
    for group in (Group.TREATED, Group.REFERENCE):
        fams = groups[group]
        if not fams:
            continue
        if group is Group.REFERENCE and hold_reference:
            for fam in fams:
                new_records.extend(records_by_family[fam])
            continue
        draws = rng.integers(0, len(fams), size=len(fams))
        for pos, j in enumerate(draws):
            fam = fams[int(j)]
            for rec in records_by_family[fam]:
                new_records.append(
                    replace(
                        rec,
                        family_id=f"{fam}~{pos}",
                        person_id=f"{rec.person_id}~{pos}",
                    )
                )
    return panel.with_records(new_records)


def _treated_categories(panel: Panel) -> dict[str, frozenset[int]]:
    seen: dict[str, set[int]] = {}
    for rec in panel.records:
        if rec.group is Group.TREATED:
            seen.setdefault(rec.question_id, set()).add(rec.response)
    return {q: frozenset(codes) for q, codes in seen.items()}


def _category_disappeared(
    panel: Panel, baseline: dict[str, frozenset[int]]
) -> bool:
    """True when a category present in the original panel vanished."""
    current = _treated_categories(panel)
    return any(
        current.get(q, frozenset()) < codes for q, codes in baseline.items()
    )


def family_bootstrap(
    panel: Panel,
    statistic: Callable[[Panel], Sequence[float]],
    n_replicates: int,
    seed: int,
    ci_level: float = 0.95,
    *,
    hold_reference: bool = False,
    workers: int = 1,
) -> BootstrapRun:
    """Family-block bootstrap of an arbitrary panel statistic.

    ``statistic`` must be deterministic given the panel and return a
    fixed-length vector. Replicates that raise are recorded as failures
    with their reason. Interval bounds are nearest-rank order statistics
    of the successful replicates at (1 +- ci_level) / 2.
    """
    if n_replicates < 1:
        raise ValidationError("bootstrap needs at least one replicate")
    if not 0.0 < ci_level < 1.0:
        raise ValidationError("ci_level must lie strictly between 0 and 1")
    if not 0 <= int(seed) < 2**64:
        raise ValidationError("seed must be a 64-bit unsigned integer")
    seed = int(seed)
    if len(panel.family_ids) < 2:
        raise ValidationError("bootstrap needs at least two families")
    _grouped_families(panel)  # validate group structure up-front
    baseline = _treated_categories(panel)

    def run_one(index: int):
        rep = resample_panel(
            panel, replicate_rng(seed, index), hold_reference=hold_reference
        )
        degenerate = _category_disappeared(rep, baseline)
        try:
            value = np.asarray(list(statistic(rep)), dtype=float)
        except Exception as exc:  # recorded, not swallowed silently
            return index, None, f"{type(exc).__name__}: {exc}", degenerate
        return index, value, None, degenerate

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, range(n_replicates)))
    else:
        results = [run_one(i) for i in range(n_replicates)]

    stats: list[np.ndarray] = []
    indices: list[int] = []
    failures: list[BootstrapFailure] = []
    degenerate_count = 0
    for index, value, reason, degenerate in results:
        degenerate_count += int(degenerate)
        if reason is not None:
            failures.append(BootstrapFailure(replicate=index, reason=reason))
        else:
            stats.append(value)
            indices.append(index)
    if not stats:
        raise EstimationError(
            "every bootstrap replicate failed; first reason: "
            f"{failures[0].reason}"
        )
    matrix = np.vstack(stats)
    n_ok = matrix.shape[0]
    lo_rank = nearest_rank((1.0 - ci_level) / 2.0, n_ok)
    hi_rank = nearest_rank((1.0 + ci_level) / 2.0, n_ok)
    ordered = np.sort(matrix, axis=0)
    return BootstrapRun(
        statistics=matrix,
        replicate_indices=tuple(indices),
        seed=seed,
        n_replicates=n_replicates,
        ci_level=ci_level,
        failures=tuple(failures),
        degenerate_replicates=degenerate_count,
        ci_low=ordered[lo_rank - 1],
        ci_high=ordered[hi_rank - 1],
    )


def consistency_distributions(
    panel: Panel,
    question_id: str,
    n_replicates: int,
    seed: int,
    *,
    hold_reference: bool = False,
    workers: int = 1,
) -> dict[str, np.ndarray]:
    """Bootstrap draws of the two adding-up statistics.

    Per replicate, refits the category system and records the sum of
    the category slopes (identically zero up to solver tolerance) and
    the person-averaged sum of family intercepts (identically one).
    Returns histogram-ready draw vectors.
    """
    from .felpm import fit_category_system

    def statistic(p: Panel) -> Sequence[float]:
        fit = fit_category_system(p, question_id)
        rows = [
            r
            for r in p.for_question(question_id, Group.TREATED)
            if r.family_id in fit.family_effects
        ]
        fe_sum = float(
            np.mean([fit.family_effects[r.family_id].sum() for r in rows])
        )
        return [float(fit.betas.sum()), fe_sum]

    run = family_bootstrap(
        panel,
        statistic,
        n_replicates,
        seed,
        hold_reference=hold_reference,
        workers=workers,
    )
    return {
        "sum_betas": run.statistics[:, 0].copy(),
        "sum_family_effects": run.statistics[:, 1].copy(),
    }
