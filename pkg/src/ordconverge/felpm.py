"""Family fixed-effects least squares.

Implements the within (demeaning) transformation, cluster-robust
standard errors with the CR1 small-sample factor, the mean-score and
binarized regressions, and the per-category linear probability system
whose slopes and family intercepts obey the adding-up identities.

Rank handling is deterministic: columns enter the design in a fixed
order (treatment first, then controls), and when the demeaned design is
rank deficient the later-entered offenders are dropped and recorded,
never reordered.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    CategorySystemFit,
    EstimationError,
    Group,
    Panel,
    RespondentRecord,
    ValidationError,
)

#: Column-pivot threshold, relative to the largest demeaned column norm.
RANK_TOL = 1e-10

#: Names accepted by the ``controls`` flags.
CONTROL_CHOICES = ("oldest", "sex", "linear_age", "flexible_age")


class DegenerateCategoryWarning(UserWarning):
    """A response category never occurs in the estimation sample."""


class DroppedColumnWarning(UserWarning):
    """A collinear design column was dropped from the fit."""


@dataclass(frozen=True)
class RegressionSpec:
    """What to regress on the treatment within families.

    ``outcome`` is one of ``mean_score`` (the numeric code),
    ``binarized`` (indicator of ``threshold_codes``) or
    ``category_indicator`` (indicator of ``category``).
    """

    question_id: str
    outcome: str
    controls: tuple[str, ...] = ()
    threshold_codes: tuple[int, ...] | None = None
    category: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "controls", tuple(self.controls))
        if self.outcome not in ("mean_score", "binarized", "category_indicator"):
            raise ValidationError(f"unknown outcome {self.outcome!r}")
        for name in self.controls:
            if name not in CONTROL_CHOICES:
                raise ValidationError(
                    f"unknown control {name!r}; choices are {CONTROL_CHOICES}"
                )
        if self.outcome == "binarized":
            if not self.threshold_codes:
                raise ValidationError("binarized outcome needs threshold_codes")
            object.__setattr__(
                self, "threshold_codes", tuple(sorted(set(self.threshold_codes)))
            )
        if self.outcome == "category_indicator" and self.category is None:
            raise ValidationError("category_indicator outcome needs a category")


@dataclass(frozen=True)
class DemeanedDesign:
    """Result of the within transformation.

    ``values`` holds the demeaned columns for rows from families with at
    least two rows; ``row_index`` maps them back to the input rows.
    ``degenerate_columns`` are columns with no within-family variation.
    """

    values: np.ndarray
    row_index: np.ndarray
    family_codes: np.ndarray
    family_ids: tuple[str, ...]
    dropped_families: tuple[str, ...]
    degenerate_columns: tuple[int, ...]


@dataclass(frozen=True)
class FeOlsFit:
    """A fitted fixed-effects regression.

    ``beta`` is aligned with ``column_names`` (treatment first);
    collinear columns removed during fitting are listed in
    ``dropped_columns`` and carry no coefficient.
    """

    beta: np.ndarray
    cluster_se: np.ndarray
    column_names: tuple[str, ...]
    family_effects: Mapping[str, float]
    n_obs: int
    n_families: int
    dropped_columns: tuple[str, ...]
    dropped_families: tuple[str, ...]

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=float)
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        se = np.asarray(self.cluster_se, dtype=float)
        se.flags.writeable = False
        object.__setattr__(self, "cluster_se", se)

    @property
    def treatment_beta(self) -> float:
        return float(self.beta[0])

    @property
    def treatment_se(self) -> float:
        return float(self.cluster_se[0])


def within_demean(
    values: np.ndarray, families: Sequence[str]
) -> DemeanedDesign:
    """Subtract family means from every column.

    Families with a single row carry no within variation; their rows
    are removed and the family ids reported. Columns that demean to
    (numerically) zero are flagged degenerate rather than dropped here;
    the caller decides whether that is an error.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] == 1 and len(families) != 1:
        values = values.T
    fam_arr = np.asarray([str(f) for f in families])
    if values.shape[0] != fam_arr.size:
        raise ValidationError("rows and family labels must align")
    unique, inverse = np.unique(fam_arr, return_inverse=True)
    counts = np.bincount(inverse)
    keep_family = counts >= 2
    if not keep_family.any():
        raise EstimationError("no family contributes two or more rows")
    keep_row = keep_family[inverse]
    row_index = np.flatnonzero(keep_row)
    sub = values[keep_row]
    # re-factorize the retained families so codes are dense
    kept_ids = unique[keep_family]
    remap = -np.ones(unique.size, dtype=int)
    remap[keep_family] = np.arange(keep_family.sum())
    codes = remap[inverse[keep_row]]
    n_kept = kept_ids.size
    sums = np.zeros((n_kept, sub.shape[1]))
    np.add.at(sums, codes, sub)
    means = sums / np.bincount(codes)[:, None]
    demeaned = sub - means[codes]
    col_scale = np.maximum(1.0, np.abs(values).max(axis=0))
    degenerate = tuple(
        int(j)
        for j in range(sub.shape[1])
        if np.abs(demeaned[:, j]).max() <= 1e-9 * col_scale[j]
    )
    return DemeanedDesign(
        values=demeaned,
        row_index=row_index,
        family_codes=codes,
        family_ids=tuple(str(f) for f in kept_ids),
        dropped_families=tuple(str(f) for f in unique[~keep_family]),
        degenerate_columns=degenerate,
    )


def _select_columns(xdm: np.ndarray) -> tuple[list[int], list[int]]:
    """Greedy rank-revealing column selection in entry order.

    A column is kept when its residual after projection on the columns
    already kept exceeds RANK_TOL times the largest column norm; later
    entered collinear columns are the ones dropped.
    """
    norms = np.linalg.norm(xdm, axis=0)
    scale = norms.max() if norms.size else 0.0
    threshold = RANK_TOL * (scale if scale > 0 else 1.0)
    kept: list[int] = []
    dropped: list[int] = []
    basis: list[np.ndarray] = []
    for j in range(xdm.shape[1]):
        col = xdm[:, j].copy()
        for _ in range(2):  # twice-is-enough reorthogonalization
            for b in basis:
                col -= b * (b @ col)
        nrm = np.linalg.norm(col)
        if nrm > threshold:
            kept.append(j)
            basis.append(col / nrm)
        else:
            dropped.append(j)
    return kept, dropped


def fit_fe_ols(
    y: Sequence[float],
    x: np.ndarray,
    families: Sequence[str],
    *,
    column_names: Sequence[str] | None = None,
    clusters: Sequence[str] | None = None,
) -> FeOlsFit:
    """Least squares with family fixed effects absorbed by demeaning.

    Standard errors are cluster-robust at the ``clusters`` level
    (default: the families themselves), with the CR1 small-sample factor
    G/(G-1) * (N-1)/(N-k) where k counts the retained slope columns.
    Family intercepts are recovered as mean(y_f) - mean(x_f) . beta.
    """
    y = np.asarray(list(y), dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != y.size:
        x = x.T
    if x.shape[0] != y.size:
        raise ValidationError("outcome and design must have equal row counts")
    names = (
        tuple(column_names)
        if column_names is not None
        else tuple(f"x{j}" for j in range(x.shape[1]))
    )
    if len(names) != x.shape[1]:
        raise ValidationError("column_names must match the design width")

    stacked = np.column_stack([y, x])
    dm = within_demean(stacked, families)
    ydm = dm.values[:, 0]
    xdm = dm.values[:, 1:]
    if 1 in dm.degenerate_columns:
        raise EstimationError(
            f"treatment column {names[0]!r} has no within-family variation"
        )

    kept, dropped = _select_columns(xdm)
    if 0 not in kept:
        raise EstimationError(
            f"treatment column {names[0]!r} was eliminated by rank selection"
        )
    if dropped:
        warnings.warn(
            f"dropping collinear columns: {[names[j] for j in dropped]}",
            DroppedColumnWarning,
            stacklevel=2,
        )
    xk = xdm[:, kept]
    beta, *_ = np.linalg.lstsq(xk, ydm, rcond=None)
    resid = ydm - xk @ beta

    n_rows = ydm.size
    k_cols = len(kept)
    if clusters is None:
        cluster_codes = dm.family_codes
        n_clusters = len(dm.family_ids)
    else:
        cl = np.asarray([str(c) for c in clusters])
        if cl.size != y.size:
            raise ValidationError("clusters must align with the input rows")
        _, cluster_codes = np.unique(cl[dm.row_index], return_inverse=True)
        n_clusters = int(cluster_codes.max()) + 1
    if n_clusters < 2:
        raise EstimationError("cluster-robust inference needs at least two clusters")
    if n_rows <= k_cols:
        raise EstimationError("fewer demeaned rows than slope columns")

    xtx = xk.T @ xk
    bread = np.linalg.inv(xtx)
    scores = np.zeros((n_clusters, k_cols))
    np.add.at(scores, cluster_codes, xk * resid[:, None])
    meat = scores.T @ scores
    cr1 = (n_clusters / (n_clusters - 1)) * ((n_rows - 1) / (n_rows - k_cols))
    vcov = cr1 * bread @ meat @ bread
    se = np.sqrt(np.maximum(np.diag(vcov), 0.0))

    # intercepts from original (pre-demeaning) family means
    raw_y = y[dm.row_index]
    raw_x = x[dm.row_index][:, kept]
    n_fam = len(dm.family_ids)
    fam_counts = np.bincount(dm.family_codes, minlength=n_fam).astype(float)
    ys = np.zeros(n_fam)
    np.add.at(ys, dm.family_codes, raw_y)
    xs = np.zeros((n_fam, k_cols))
    np.add.at(xs, dm.family_codes, raw_x)
    intercepts = ys / fam_counts - (xs / fam_counts[:, None]) @ beta
    family_effects = dict(zip(dm.family_ids, intercepts.tolist()))

    return FeOlsFit(
        beta=beta,
        cluster_se=se,
        column_names=tuple(names[j] for j in kept),
        family_effects=family_effects,
        n_obs=int(n_rows),
        n_families=int(n_fam),
        dropped_columns=tuple(names[j] for j in dropped),
        dropped_families=dm.dropped_families,
    )


def _treated_rows(panel: Panel, question_id: str) -> tuple[RespondentRecord, ...]:
    rows = panel.for_question(question_id, Group.TREATED)
    if not rows:
        raise ValidationError(f"no treated records for question {question_id!r}")
    return rows


def build_design(
    rows: Sequence[RespondentRecord], controls: Sequence[str]
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Treatment column plus the requested control columns.

    Flexible age expands to one indicator per integer interview age in
    the sample, with the minimum age as the omitted reference; dummies
    that turn out collinear are dropped downstream by rank selection.
    """
    for name in controls:
        if name not in CONTROL_CHOICES:
            raise ValidationError(
                f"unknown control {name!r}; choices are {CONTROL_CHOICES}"
            )
    cols = [np.asarray([r.treatment for r in rows], dtype=float)]
    names = ["treatment"]
    if "oldest" in controls:
        cols.append(np.asarray([r.oldest for r in rows], dtype=float))
        names.append("oldest")
    if "sex" in controls:
        cols.append(np.asarray([r.sex for r in rows], dtype=float))
        names.append("sex")
    if "linear_age" in controls:
        cols.append(np.asarray([r.age_at_interview for r in rows], dtype=float))
        names.append("age")
    if "flexible_age" in controls:
        ages = sorted({r.age_at_interview for r in rows})
        for age in ages[1:]:  # minimum age is the reference
            cols.append(
                np.asarray([1.0 if r.age_at_interview == age else 0.0 for r in rows])
            )
            names.append(f"age=={age}")
    return np.column_stack(cols), tuple(names)


def _outcome_vector(rows: Sequence[RespondentRecord], spec: RegressionSpec) -> np.ndarray:
    if spec.outcome == "mean_score":
        return np.asarray([float(r.response) for r in rows])
    if spec.outcome == "binarized":
        codes = set(spec.threshold_codes or ())
        return np.asarray([1.0 if r.response in codes else 0.0 for r in rows])
    return np.asarray(
        [1.0 if r.response == spec.category else 0.0 for r in rows]
    )


def fit_regression(panel: Panel, spec: RegressionSpec) -> FeOlsFit:
    """Fit one family fixed-effects regression on the treated group."""
    if spec.outcome == "binarized":
        codes = set(spec.threshold_codes or ())
        valid = set(panel.scale.codes)
        if not codes or not codes < valid:
            raise ValidationError(
                "binarized threshold set must be a nonempty proper subset of the scale"
            )
    rows = _treated_rows(panel, spec.question_id)
    x, names = build_design(rows, spec.controls)
    y = _outcome_vector(rows, spec)
    families = [r.family_id for r in rows]
    return fit_fe_ols(y, x, families, column_names=names)


def fit_mean_score(panel: Panel, spec: RegressionSpec) -> FeOlsFit:
    """Regression of the numeric 1..K code on the treatment."""
    if spec.outcome != "mean_score":
        raise ValidationError("fit_mean_score requires a mean_score spec")
    return fit_regression(panel, spec)


def fit_category_system(
    panel: Panel, question_id: str, controls: Sequence[str] = ()
) -> CategorySystemFit:
    """Fit the K per-category indicator regressions with a shared design.

    Because every category regression uses the identical demeaned design
    and the indicators sum to one, the fitted slopes sum to zero and each
    family's intercepts sum to one; both identities are verified at
    construction of the result. A category never chosen in the sample
    fits to exactly zero and is reported with a warning.
    """
    rows = _treated_rows(panel, question_id)
    x, names = build_design(rows, tuple(controls))
    families = [r.family_id for r in rows]
    k = panel.scale.size
    observed = {r.response for r in rows}

    betas = np.zeros(k)
    ses = np.zeros(k)
    effects: dict[str, np.ndarray] = {}
    n_obs = n_fam = 0
    degenerate = []
    for code in range(1, k + 1):
        if code not in observed:
            degenerate.append(code)
        y = np.asarray([1.0 if r.response == code else 0.0 for r in rows])
        fit = fit_fe_ols(y, x, families, column_names=names)
        betas[code - 1] = fit.treatment_beta
        ses[code - 1] = fit.treatment_se
        for fam, gamma in fit.family_effects.items():
            effects.setdefault(fam, np.zeros(k))[code - 1] = gamma
        n_obs, n_fam = fit.n_obs, fit.n_families
    if degenerate:
        warnings.warn(
            f"question {question_id!r}: categories {degenerate} never chosen; "
            "their slopes and intercepts are exactly zero",
            DegenerateCategoryWarning,
            stacklevel=2,
        )
    return CategorySystemFit(
        question_id=question_id,
        betas=betas,
        cluster_se=ses,
        family_effects=effects,
        n_obs=n_obs,
        n_families=n_fam,
        degenerate_categories=tuple(degenerate),
    )
