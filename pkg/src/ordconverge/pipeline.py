"""Command pipeline: per-question estimation, bootstrap CIs, report files.

Every command evaluates a named vector of statistics on the loaded
panel, optionally bootstraps the same vector over family redraws, and
serializes the result as records plus (for ``report``) tidy figure data
and rendered figures. Outputs are byte-identical across runs with the
same inputs, configuration and seed, regardless of worker count.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .bootstrap import BootstrapRun, family_bootstrap
from .core import (
    Group,
    Panel,
    ValidationError,
    empirical_distribution,
    sibling_subpanel,
)
from .distances import kolmogorov_distance, tv_distance
from .estimands import (
    MkdInterval,
    compute_estimands,
    counterfactual_distribution,
    heterogeneity_split,
)
from .felpm import (
    DegenerateCategoryWarning,
    RegressionSpec,
    fit_category_system,
    fit_regression,
)
from .figures import save_consistency_hist, save_share_bars
from .io import (
    RunConfig,
    default_regions_path,
    emit_respondents,
    load_country_means,
    load_regions,
    load_respondents,
)
from .synthetic import SyntheticConfig, generate_panel

COMMANDS = (
    "estimate",
    "distances",
    "counterfactual",
    "marginal",
    "hetero",
    "simulate",
    "report",
)

_PARTS = {
    "estimate": ("system", "regressions"),
    "distances": ("distances",),
    "counterfactual": ("distances", "system", "counterfactual"),
    "marginal": ("distances", "system", "marginal"),
    "hetero": ("distances", "system", "counterfactual", "marginal"),
    "report": ("distances", "system", "counterfactual", "marginal", "regressions"),
}

_MEDIAN_SPLIT_LABELS = ("similar_to_reference", "different_from_reference")


@dataclass(frozen=True)
class ReportRecord:
    estimand: str
    question: str
    split: str
    point: float | None
    se: float | None
    ci_low: float | None
    ci_high: float | None
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, Any]:
        return {
            "estimand": self.estimand,
            "question": self.question,
            "split": self.split,
            "point": self.point,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "flags": list(self.flags),
        }


@dataclass
class _Evaluation:
    values: dict[str, float]
    se: dict[str, float]
    flags: dict[str, tuple[str, ...]]
    hidden_point: set[str]


def _name(question: str, estimand: str) -> str:
    return f"{question}::{estimand}"


def _evaluate(
    panel: Panel, config: RunConfig, questions: Sequence[str], parts: Sequence[str]
) -> _Evaluation:
    """Compute every statistic the requested parts define, per question."""
    ev = _Evaluation(values={}, se={}, flags={}, hidden_point=set())
    k = config.scale.size
    for q in questions:
        sub = sibling_subpanel(panel, q)
        p_treated = empirical_distribution(sub, q, Group.TREATED)
        p_reference = empirical_distribution(sub, q, Group.REFERENCE)

        if "distances" in parts:
            ev.values[_name(q, "tv_observed")] = tv_distance(p_reference, p_treated)
            ev.values[_name(q, "kd_observed")] = kolmogorov_distance(
                p_reference, p_treated
            ).value
            for a in range(1, k + 1):
                ev.values[_name(q, f"share_observed_cat{a}")] = p_treated.probs[a - 1]
                ev.values[_name(q, f"share_reference_cat{a}")] = p_reference.probs[a - 1]

        fit = None
        if "system" in parts or "counterfactual" in parts or "marginal" in parts:
            fit = fit_category_system(sub, q, config.controls)
            sum_fe = float(
                np.mean(
                    [
                        fit.family_effects[r.family_id].sum()
                        for r in sub.for_question(q, Group.TREATED)
                    ]
                )
            )
            ev.values[_name(q, "sum_betas")] = float(fit.betas.sum())
            ev.values[_name(q, "sum_family_effects")] = sum_fe
            for a in range(1, k + 1):
                name = _name(q, f"beta_cat{a}")
                ev.values[name] = float(fit.betas[a - 1])
                ev.se[name] = float(fit.cluster_se[a - 1])
                if a in fit.degenerate_categories:
                    ev.flags[name] = ("degenerate_category",)

        if "counterfactual" in parts or "marginal" in parts:
            p_cf = counterfactual_distribution(fit, sub)
            est = compute_estimands(p_reference, p_treated, p_cf, fit.betas)
            if "counterfactual" in parts:
                ev.values[_name(q, "tv_counterfactual")] = est.tv_counterfactual
                ev.values[_name(q, "delta_tv0")] = est.delta_tv0
                ev.values[_name(q, "kd_counterfactual")] = est.kd_counterfactual
                ev.values[_name(q, "delta_kd0")] = est.delta_kd0
                if "counterfactual_improper" in est.flags:
                    for nm in ("tv_counterfactual", "delta_tv0", "kd_counterfactual", "delta_kd0"):
                        ev.flags[_name(q, nm)] = ("counterfactual_improper",)
                for a in range(1, k + 1):
                    ev.values[_name(q, f"share_counterfactual_cat{a}")] = p_cf.probs[a - 1]
            if "marginal" in parts:
                name = _name(q, "mtvd")
                ev.values[name] = est.mtvd
                if "mtvd_kink" in est.flags:
                    ev.flags[name] = ("kink",)
                name = _name(q, "mkd")
                ev.values[name] = est.mkd_point()
                if isinstance(est.mkd, MkdInterval):
                    ev.hidden_point.add(name)
                    kind = "degenerate" if est.mkd.degenerate else "interval"
                    ev.flags[name] = (
                        f"{kind}[{est.mkd.low:.6g},{est.mkd.high:.6g}]",
                    )

        if "regressions" in parts:
            specs = [("mean_score_beta", RegressionSpec(q, "mean_score", config.controls))]
            if config.binarized_codes:
                specs.append(
                    (
                        "binarized_beta",
                        RegressionSpec(
                            q, "binarized", config.controls,
                            threshold_codes=config.binarized_codes,
                        ),
                    )
                )
            for label, codes in config.collapse_map:
                specs.append(
                    (
                        f"{label}_beta",
                        RegressionSpec(
                            q, "binarized", config.controls, threshold_codes=codes
                        ),
                    )
                )
            for estimand, spec in specs:
                reg = fit_regression(sub, spec)
                name = _name(q, estimand)
                ev.values[name] = reg.treatment_beta
                ev.se[name] = reg.treatment_se
                if reg.dropped_columns:
                    ev.flags[name] = (
                        "dropped:" + "+".join(reg.dropped_columns),
                    )
    return ev


def _bootstrap_values(
    panel: Panel,
    config: RunConfig,
    questions: Sequence[str],
    parts: Sequence[str],
    names: Sequence[str],
    seed: int,
) -> BootstrapRun | None:
    if config.reps < 1:
        return None

    def statistic(p: Panel) -> Sequence[float]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateCategoryWarning)
            ev = _evaluate(p, config, questions, parts)
        return [ev.values[n] for n in names]

    return family_bootstrap(
        panel,
        statistic,
        config.reps,
        seed,
        config.ci_level,
        hold_reference=config.hold_reference,
        workers=config.workers,
    )


_RECORD_ORDER = {
    "estimate": ("mean_score_beta", "binarized_beta", "@collapse", "@betas"),
    "distances": ("tv_observed", "kd_observed"),
    "counterfactual": (
        "tv_observed",
        "tv_counterfactual",
        "delta_tv0",
        "kd_observed",
        "kd_counterfactual",
        "delta_kd0",
    ),
    "marginal": ("mtvd", "mkd"),
    "hetero": (
        "tv_observed",
        "tv_counterfactual",
        "delta_tv0",
        "kd_observed",
        "kd_counterfactual",
        "delta_kd0",
        "mtvd",
        "mkd",
    ),
    "report": (
        "tv_observed",
        "tv_counterfactual",
        "delta_tv0",
        "mtvd",
        "kd_observed",
        "kd_counterfactual",
        "delta_kd0",
        "mkd",
        "sum_betas",
        "sum_family_effects",
        "mean_score_beta",
        "binarized_beta",
        "@collapse",
        "@betas",
    ),
}


def _estimand_order(command: str, config: RunConfig) -> list[str]:
    order: list[str] = []
    for item in _RECORD_ORDER[command]:
        if item == "@collapse":
            order.extend(f"{label}_beta" for label, _ in config.collapse_map)
        elif item == "@betas":
            order.extend(f"beta_cat{a}" for a in config.scale.codes)
        elif item == "binarized_beta" and not config.binarized_codes:
            continue
        else:
            order.append(item)
    return order


def _assemble_records(
    command: str,
    config: RunConfig,
    questions: Sequence[str],
    ev: _Evaluation,
    run: BootstrapRun | None,
    names: Sequence[str],
    split: str = "",
) -> list[ReportRecord]:
    ci: dict[str, tuple[float, float]] = {}
    if run is not None:
        for i, name in enumerate(names):
            ci[name] = (float(run.ci_low[i]), float(run.ci_high[i]))
    records = []
    for q in questions:
        for estimand in _estimand_order(command, config):
            name = _name(q, estimand)
            if name not in ev.values:
                continue
            lo, hi = ci.get(name, (None, None))
            records.append(
                ReportRecord(
                    estimand=estimand,
                    question=q,
                    split=split,
                    point=None if name in ev.hidden_point else ev.values[name],
                    se=ev.se.get(name),
                    ci_low=lo,
                    ci_high=hi,
                    flags=ev.flags.get(name, ()),
                )
            )
    return records


# -- serialization -------------------------------------------------------


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6g}"


def _metadata(command: str, config: RunConfig) -> dict[str, Any]:
    # worker count is deliberately absent: results are independent of the
    # parallelism degree, so it is execution mechanics, not provenance.
    # "config" echoes the input file verbatim; "effective" records the
    # settings actually used after CLI overrides.
    return {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "reps": config.reps,
        "ci_level": config.ci_level,
        "hold_reference": config.hold_reference,
        "cluster_correction": "CR1",
        "config": config.echo if config.echo is not None else {},
        "effective": {
            "scale_labels": list(config.scale.labels),
            "wave_order": list(config.wave_order),
            "questions": list(config.questions) if config.questions else None,
            "controls": list(config.controls),
            "binarized_codes": (
                list(config.binarized_codes) if config.binarized_codes else None
            ),
            "collapse_map": {name: list(codes) for name, codes in config.collapse_map},
            "split": config.split,
            "reference_country": config.reference_country,
            "output_format": config.output_format,
        },
    }


def _write_records(
    out_dir: Path, command: str, config: RunConfig, records: Sequence[ReportRecord]
) -> list[Path]:
    meta = _metadata(command, config)
    written = []
    meta_path = out_dir / "run_metadata.json"
    meta_path.write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    written.append(meta_path)
    if config.output_format == "json":
        path = out_dir / "records.json"
        payload = {"metadata": meta, "records": [r.as_dict() for r in records]}
        path.write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    else:
        path = out_dir / "records.tsv"
        lines = [
            f"# version\t{__version__}",
            f"# command\t{command}",
            f"# seed\t{config.seed}",
            f"# config\t{json.dumps(meta['config'], sort_keys=True)}",
            "estimand\tquestion\tsplit\tpoint\tse\tci_low\tci_high\tflags",
        ]
        for r in records:
            lines.append(
                "\t".join(
                    [
                        r.estimand,
                        r.question,
                        r.split,
                        _fmt(r.point),
                        _fmt(r.se),
                        _fmt(r.ci_low),
                        _fmt(r.ci_high),
                        ",".join(r.flags),
                    ]
                )
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(path)
    return written


def _write_summary(
    out_dir: Path,
    config: RunConfig,
    questions: Sequence[str],
    records: Sequence[ReportRecord],
) -> Path:
    """Compact table: one row per estimand, one column per question,
    cells shaped like ``0.148 [0.112, 0.184]``."""
    cells: dict[tuple[str, str], str] = {}
    order: list[str] = []
    for r in records:
        if r.split or r.point is None:
            continue
        if r.estimand not in order:
            order.append(r.estimand)
        text = _fmt(r.point)
        if r.ci_low is not None:
            text += f" [{_fmt(r.ci_low)}, {_fmt(r.ci_high)}]"
        cells[(r.estimand, r.question)] = text
    lines = ["estimand\t" + "\t".join(questions)]
    for estimand in order:
        row = [cells.get((estimand, q), "") for q in questions]
        lines.append(estimand + "\t" + "\t".join(row))
    path = out_dir / "summary.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _write_shares(
    out_dir: Path,
    config: RunConfig,
    questions: Sequence[str],
    ev: _Evaluation,
    run: BootstrapRun | None,
    names: Sequence[str],
) -> tuple[list[Path], dict[str, dict[str, list[float]]]]:
    """Tidy per-question share tables; returns the data for figure rendering."""
    ci: dict[str, tuple[float, float]] = {}
    if run is not None:
        for i, name in enumerate(names):
            ci[name] = (float(run.ci_low[i]), float(run.ci_high[i]))
    series_names = ("observed", "counterfactual", "reference")
    written = []
    share_data: dict[str, dict[str, list[float]]] = {}
    for q in questions:
        rows = ["question\tseries\tcategory_code\tcategory_label\tshare\tci_low\tci_high"]
        data: dict[str, list[float]] = {}
        for series in series_names:
            probe = _name(q, f"share_{series}_cat1")
            if probe not in ev.values:
                continue
            shares = []
            for a in config.scale.codes:
                name = _name(q, f"share_{series}_cat{a}")
                value = ev.values[name]
                lo, hi = ci.get(name, (None, None))
                shares.append(value)
                rows.append(
                    "\t".join(
                        [
                            q,
                            series,
                            str(a),
                            config.scale.labels[a - 1],
                            repr(value),
                            "" if lo is None else repr(lo),
                            "" if hi is None else repr(hi),
                        ]
                    )
                )
            data[series] = shares
        path = out_dir / f"shares_{q}.tsv"
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        written.append(path)
        share_data[q] = data
    return written, share_data


def _write_consistency(
    out_dir: Path,
    questions: Sequence[str],
    run: BootstrapRun,
    names: Sequence[str],
) -> tuple[list[Path], dict[str, tuple[np.ndarray, np.ndarray]]]:
    index = {name: i for i, name in enumerate(names)}
    written = []
    draws: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for q in questions:
        bi = index.get(_name(q, "sum_betas"))
        fi = index.get(_name(q, "sum_family_effects"))
        if bi is None or fi is None:
            continue
        beta_draws = run.statistics[:, bi]
        fe_draws = run.statistics[:, fi]
        rows = ["replicate\tsum_betas\tsum_family_effects"]
        for rep, b, f in zip(run.replicate_indices, beta_draws, fe_draws):
            rows.append(f"{rep}\t{b!r}\t{f!r}")
        path = out_dir / f"consistency_{q}.tsv"
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        written.append(path)
        draws[q] = (beta_draws, fe_draws)
    return written, draws


def _render_figures(
    out_dir: Path,
    config: RunConfig,
    questions: Sequence[str],
    share_data: Mapping[str, Mapping[str, list[float]]],
    consistency: Mapping[str, tuple[np.ndarray, np.ndarray]],
    ev: _Evaluation,
    run: BootstrapRun | None,
    names: Sequence[str],
) -> list[Path]:
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    ci: dict[str, tuple[float, float]] = {}
    if run is not None:
        for i, name in enumerate(names):
            ci[name] = (float(run.ci_low[i]), float(run.ci_high[i]))
    written = []
    for q in questions:
        series = share_data.get(q, {})
        if series:
            intervals = {}
            for label in series:
                lows, highs = [], []
                for a in config.scale.codes:
                    pair = ci.get(_name(q, f"share_{label}_cat{a}"))
                    if pair is None:
                        break
                    lows.append(pair[0])
                    highs.append(pair[1])
                else:
                    intervals[label] = (lows, highs)
            path = fig_dir / f"shares_{q}.png"
            save_share_bars(
                path, config.scale, series, intervals or None,
                title=f"response shares: {q}",
            )
            written.append(path)
        if q in consistency:
            beta_draws, fe_draws = consistency[q]
            path = fig_dir / f"consistency_{q}.png"
            save_consistency_hist(
                path, beta_draws, fe_draws, title=f"adding-up checks: {q}"
            )
            written.append(path)
    return written


# -- command runners ------------------------------------------------------


def _questions_for(panel: Panel, config: RunConfig) -> tuple[str, ...]:
    questions = config.questions or panel.questions
    unknown = [q for q in questions if q not in panel.questions]
    if unknown:
        raise ValidationError(f"unknown question ids: {unknown}")
    return tuple(questions)


def _split_panels(
    panel: Panel, config: RunConfig, countries_path: str | Path | None
) -> list[tuple[str, Panel]]:
    if config.split == "regions":
        path = config.regions_file or default_regions_path()
        name, codes = load_regions(path)
        first, second = heterogeneity_split(panel, "region_list", codes)
        labels = (name, "rest_of_world")
    else:
        if countries_path is None:
            raise ValidationError(
                "median-distance split needs a country means file (--countries)"
            )
        means = load_country_means(countries_path)
        table = means.distance_table(config.reference_country)
        first, second = heterogeneity_split(panel, "median_country_distance", table)
        labels = _MEDIAN_SPLIT_LABELS
    out = []
    for label, side in zip(labels, (first, second)):
        if any(r.group is Group.TREATED for r in side.records):
            out.append((label, side))
        else:
            warnings.warn(
                f"split partition {label!r} has no treated records; skipped",
                UserWarning,
                stacklevel=2,
            )
    return out


def _run_standard(
    command: str,
    panel: Panel,
    config: RunConfig,
    questions: Sequence[str],
    seed: int,
    split: str = "",
) -> tuple[list[ReportRecord], _Evaluation, BootstrapRun | None, list[str]]:
    parts = _PARTS[command]
    ev = _evaluate(panel, config, questions, parts)
    names = list(ev.values)
    run = _bootstrap_values(panel, config, questions, parts, names, seed)
    records = _assemble_records(command, config, questions, ev, run, names, split)
    return records, ev, run, names


def _run_simulate(config: RunConfig, out_dir: Path) -> list[Path]:
    if not config.synthetic:
        raise ValidationError("simulate needs a 'synthetic' section in the config")
    syn = SyntheticConfig.from_mapping(config.synthetic)
    if syn.scale.size != config.scale.size:
        config = config.with_overrides(
            scale=syn.scale, binarized_codes=None, collapse_map=()
        )
    else:
        config = config.with_overrides(scale=syn.scale)
    panel, truth = generate_panel(syn)
    questions = (syn.question_id,)
    # distance + system + marginal rows, then the recovery comparison
    records, ev, run, names = _run_standard(
        "hetero", panel, config, questions, config.seed
    )

    truth_map: dict[str, float] = {
        "tv_observed": truth.estimands.tv_observed,
        "tv_counterfactual": truth.estimands.tv_counterfactual,
        "delta_tv0": truth.estimands.delta_tv0,
        "mtvd": truth.estimands.mtvd,
        "kd_observed": truth.estimands.kd_observed,
        "kd_counterfactual": truth.estimands.kd_counterfactual,
        "delta_kd0": truth.estimands.delta_kd0,
        "mkd": truth.estimands.mkd_point(),
    }
    for a, beta in enumerate(truth.betas, start=1):
        truth_map[f"beta_cat{a}"] = float(beta)
    q = syn.question_id
    beta_records = []
    for a in syn.scale.codes:
        name = _name(q, f"beta_cat{a}")
        lo, hi = (None, None)
        if run is not None:
            i = names.index(name)
            lo, hi = float(run.ci_low[i]), float(run.ci_high[i])
        flags = ev.flags.get(name, ())
        if lo is not None and not lo <= truth_map[f"beta_cat{a}"] <= hi:
            flags = flags + ("truth_outside_ci",)
        beta_records.append(
            ReportRecord(
                estimand=f"beta_cat{a}",
                question=q,
                split="",
                point=ev.values[name],
                se=ev.se.get(name),
                ci_low=lo,
                ci_high=hi,
                flags=flags,
            )
        )
    records.extend(beta_records)
    for estimand, value in sorted(truth_map.items()):
        records.append(
            ReportRecord(
                estimand=f"true_{estimand}",
                question=q,
                split="",
                point=value,
                se=None,
                ci_low=None,
                ci_high=None,
            )
        )
    written = _write_records(out_dir, "simulate", config, records)
    panel_path = out_dir / "synthetic_panel.csv"
    emit_respondents(panel, panel_path)
    written.append(panel_path)
    return written


def run_pipeline(
    command: str,
    config: RunConfig,
    *,
    data_path: str | Path | None = None,
    countries_path: str | Path | None = None,
    out_dir: str | Path,
) -> list[Path]:
    """Execute one CLI command and return the files written."""
    if command not in COMMANDS:
        raise ValidationError(f"unknown command {command!r}; choices: {COMMANDS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if command == "simulate":
        return _run_simulate(config, out)
    if data_path is None:
        raise ValidationError(f"command {command!r} needs a respondent file (--data)")
    panel = load_respondents(data_path, config)
    questions = _questions_for(panel, config)

    if command == "hetero":
        if config.split is None:
            raise ValidationError("hetero needs a split rule (--split)")
        records: list[ReportRecord] = []
        for offset, (label, side) in enumerate(
            _split_panels(panel, config, countries_path), start=1
        ):
            side_records, *_ = _run_standard(
                "hetero", side, config, questions, config.seed + offset, split=label
            )
            records.extend(side_records)
        return _write_records(out, command, config, records)

    records, ev, run, names = _run_standard(command, panel, config, questions, config.seed)

    if command == "report" and config.split is not None:
        for offset, (label, side) in enumerate(
            _split_panels(panel, config, countries_path), start=1
        ):
            side_records, *_ = _run_standard(
                "hetero", side, config, questions, config.seed + offset, split=label
            )
            records.extend(side_records)

    written = _write_records(out, command, config, records)
    if command == "report":
        written.append(_write_summary(out, config, questions, records))
        share_paths, share_data = _write_shares(out, config, questions, ev, run, names)
        written.extend(share_paths)
        consistency: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        if run is not None:
            cons_paths, consistency = _write_consistency(out, questions, run, names)
            written.extend(cons_paths)
        written.extend(
            _render_figures(
                out, config, questions, share_data, consistency, ev, run, names
            )
        )
    return written
