"""Data ingestion, configuration, and canonical serialization.

The CSV contracts are strict on purpose: exact headers, explicit codes,
no type inference. Every rejected row is reported with its line number
so broken extracts can be fixed in one pass.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .core import (
    Group,
    OrdinalScale,
    Panel,
    RespondentRecord,
    ValidationError,
    dedupe_most_recent,
)
from .distances import country_distance
from .felpm import CONTROL_CHOICES

RESPONDENT_COLUMNS = (
    "person_id",
    "family_id",
    "group",
    "question_id",
    "response_code",
    "mig_age",
    "sex",
    "oldest",
    "age_at_interview",
    "wave",
    "country_code",
)

DEFAULT_SCALE_LABELS = (
    "strongly_agree",
    "agree",
    "neither",
    "disagree",
    "strongly_disagree",
)

OUTPUT_FORMATS = ("tsv", "json")
SPLIT_RULES = ("regions", "median-distance")


class CsvValidationError(ValidationError):
    """One or more rows failed validation; carries (line, message) pairs."""

    def __init__(self, path: str | Path, errors: Sequence[tuple[int, str]]):
        self.errors = tuple(errors)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.errors[:20])
        extra = "" if len(self.errors) <= 20 else f" (+{len(self.errors) - 20} more)"
        super().__init__(f"{path}: {lines}{extra}")


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration, echoed verbatim into every report."""

    scale: OrdinalScale
    wave_order: tuple[str, ...]
    questions: tuple[str, ...] | None = None
    controls: tuple[str, ...] = ()
    binarized_codes: tuple[int, ...] | None = None
    collapse_map: tuple[tuple[str, tuple[int, ...]], ...] = ()
    reps: int = 0
    seed: int = 20260811
    ci_level: float = 0.95
    hold_reference: bool = False
    split: str | None = None
    regions_file: str | None = None
    reference_country: str = "UK"
    output_format: str = "tsv"
    workers: int = 1
    synthetic: Mapping[str, Any] | None = None
    echo: Mapping[str, Any] | None = None

    def __post_init__(self) -> None:
        if self.reps < 0:
            raise ValidationError("reps must be nonnegative")
        if not 0.0 < self.ci_level < 1.0:
            raise ValidationError("ci_level must lie strictly between 0 and 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.output_format not in OUTPUT_FORMATS:
            raise ValidationError(
                f"output format must be one of {OUTPUT_FORMATS}"
            )
        if self.split is not None and self.split not in SPLIT_RULES:
            raise ValidationError(f"split must be one of {SPLIT_RULES}")
        for name in self.controls:
            if name not in CONTROL_CHOICES:
                raise ValidationError(
                    f"unknown control {name!r}; choices are {CONTROL_CHOICES}"
                )
        codes = set(self.scale.codes)
        if self.binarized_codes is not None:
            chosen = set(self.binarized_codes)
            if not chosen or not chosen < codes:
                raise ValidationError(
                    "binarized_codes must be a nonempty proper subset of the scale"
                )
        for name, group_codes in self.collapse_map:
            if not set(group_codes) <= codes:
                raise ValidationError(
                    f"collapse group {name!r} references unknown codes"
                )

    @classmethod
    def default(cls) -> "RunConfig":
        return cls.from_mapping({})

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {
            "scale_labels", "wave_order", "questions", "controls",
            "binarized_codes", "collapse_map", "bootstrap", "split",
            "regions_file", "reference_country", "output_format", "workers",
            "synthetic",
        }
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        labels = tuple(data.get("scale_labels", DEFAULT_SCALE_LABELS))
        scale = OrdinalScale(labels)
        boot = data.get("bootstrap", {})
        if not isinstance(boot, Mapping):
            raise ValidationError("bootstrap section must be a mapping")
        binarized = data.get("binarized_codes")
        if binarized is None and scale.size == 5:
            binarized = (1, 2, 3)
        collapse = data.get("collapse_map")
        if collapse is None:
            collapse = (
                (("agree", (1, 2)), ("neither", (3,)), ("disagree", (4, 5)))
                if scale.size == 5
                else ()
            )
        else:
            collapse = tuple((str(k), tuple(int(c) for c in v)) for k, v in collapse)
        questions = data.get("questions")
        return cls(
            scale=scale,
            wave_order=tuple(data.get("wave_order", ("b", "d", "j"))),
            questions=tuple(questions) if questions else None,
            controls=tuple(data.get("controls", ())),
            binarized_codes=tuple(binarized) if binarized else None,
            collapse_map=collapse,
            reps=int(boot.get("reps", 0)),
            seed=int(boot.get("seed", 20260811)),
            ci_level=float(boot.get("ci_level", 0.95)),
            hold_reference=bool(boot.get("hold_reference", False)),
            split=data.get("split"),
            regions_file=data.get("regions_file"),
            reference_country=str(data.get("reference_country", "UK")),
            output_format=str(data.get("output_format", "tsv")),
            workers=int(data.get("workers", 1)),
            synthetic=data.get("synthetic"),
            echo=dict(data),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON config ({exc})") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        return cls.from_mapping(data)

    def with_overrides(self, **kwargs: Any) -> "RunConfig":
        clean = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **clean)


def _parse_int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"{what} must be an integer, got {text!r}") from None


def _parse_response(text: str, scale: OrdinalScale) -> int:
    """Accept a numeric code 1..K or an exact label from the codebook."""
    try:
        code = int(text)
    except ValueError:
        if text in scale.labels:
            return scale.code_of(text)
        raise ValueError(
            f"response_code must be 1..{scale.size} or one of the configured "
            f"labels, got {text!r}"
        ) from None
    if not 1 <= code <= scale.size:
        raise ValueError(f"response_code {code} outside 1..{scale.size}")
    return code


def load_respondents(path: str | Path, config: RunConfig) -> Panel:
    """Read, validate and dedupe a respondent CSV into a Panel.

    All row-level problems are collected and raised together with their
    line numbers; nothing is silently skipped.
    """
    path = Path(path)
    errors: list[tuple[int, str]] = []
    records: list[RespondentRecord] = []
    seen: dict[tuple[str, str, str], int] = {}
    waves = set(config.wave_order)

    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvValidationError(path, [(1, "file is empty")]) from None
        if tuple(header) not in (RESPONDENT_COLUMNS, RESPONDENT_COLUMNS[:-1]):
            raise CsvValidationError(
                path,
                [(1, f"header must be {','.join(RESPONDENT_COLUMNS)} "
                     "(country_code optional)")],
            )
        has_country = len(header) == len(RESPONDENT_COLUMNS)

        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                errors.append((lineno, f"expected {len(header)} fields, got {len(row)}"))
                continue
            (person, family, group_text, question, code_text, mig_text,
             sex_text, oldest_text, age_text, wave) = row[:10]
            country = row[10].strip() if has_country else ""
            try:
                if not person or not family or not question:
                    raise ValueError("person_id, family_id and question_id are required")
                group = Group.coerce(group_text)
                code = _parse_response(code_text, config.scale)
                if group is Group.TREATED:
                    if mig_text.strip() == "":
                        raise ValueError("treated row is missing mig_age")
                    treatment = float(mig_text)
                else:
                    if mig_text.strip() != "":
                        raise ValueError("reference row must leave mig_age empty")
                    treatment = None
                sex = _parse_int(sex_text, "sex")
                oldest = _parse_int(oldest_text, "oldest")
                age = _parse_int(age_text, "age_at_interview")
                if wave not in waves:
                    raise ValueError(
                        f"wave {wave!r} is not in the configured order {config.wave_order}"
                    )
                record = RespondentRecord(
                    person_id=person,
                    family_id=family,
                    group=group,
                    question_id=question,
                    response=code,
                    treatment=treatment,
                    sex=sex,
                    oldest=oldest,
                    age_at_interview=age,
                    wave=wave,
                    country_code=country or None,
                )
            except (ValueError, ValidationError) as exc:
                errors.append((lineno, str(exc)))
                continue
            key = (person, question, wave)
            if key in seen:
                errors.append(
                    (lineno, f"duplicate (person, question, wave) also on line {seen[key]}")
                )
                continue
            seen[key] = lineno
            records.append(record)

    if errors:
        raise CsvValidationError(path, errors)
    if not records:
        raise CsvValidationError(path, [(2, "no data rows")])
    panel = Panel(records=tuple(records), scale=config.scale, wave_order=config.wave_order)
    return dedupe_most_recent(panel)


def emit_respondents(panel: Panel, path: str | Path) -> None:
    """Canonical CSV writer; ``load_respondents`` round-trips its output."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(RESPONDENT_COLUMNS)
        for rec in panel.records:
            writer.writerow(
                [
                    rec.person_id,
                    rec.family_id,
                    rec.group.value,
                    rec.question_id,
                    rec.response,
                    "" if rec.treatment is None else repr(rec.treatment),
                    rec.sex,
                    rec.oldest,
                    rec.age_at_interview,
                    rec.wave,
                    rec.country_code or "",
                ]
            )


@dataclass(frozen=True)
class CountryMeans:
    """Per-country mean responses to the J comparison items."""

    codes: tuple[str, ...]
    items: tuple[str, ...]
    means: np.ndarray

    def row(self, code: str) -> np.ndarray:
        try:
            idx = self.codes.index(code)
        except ValueError:
            raise ValidationError(f"country {code!r} not in the means table") from None
        return self.means[idx]

    def distance_table(self, reference_code: str) -> dict[str, float]:
        """Euclidean distance of every country from the reference row."""
        ref = self.row(reference_code)
        return {
            code: country_distance(self.means[i], ref)
            for i, code in enumerate(self.codes)
        }


def load_country_means(path: str | Path) -> CountryMeans:
    """Read the country-means CSV: country_code plus J numeric columns."""
    path = Path(path)
    errors: list[tuple[int, str]] = []
    codes: list[str] = []
    rows: list[list[float]] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvValidationError(path, [(1, "file is empty")]) from None
        if not header or header[0] != "country_code" or len(header) < 2:
            raise CsvValidationError(
                path, [(1, "header must be country_code followed by >=1 mean columns")]
            )
        items = tuple(header[1:])
        seen: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                errors.append((lineno, f"expected {len(header)} fields, got {len(row)}"))
                continue
            code = row[0].strip()
            if not code:
                errors.append((lineno, "country_code is required"))
                continue
            if code in seen:
                errors.append((lineno, f"duplicate country {code!r} also on line {seen[code]}"))
                continue
            seen[code] = lineno
            try:
                values = [float(v) for v in row[1:]]
            except ValueError:
                errors.append((lineno, "mean columns must be numeric"))
                continue
            codes.append(code)
            rows.append(values)
    if errors:
        raise CsvValidationError(path, errors)
    if not codes:
        raise CsvValidationError(path, [(2, "no data rows")])
    means = np.asarray(rows, dtype=float)
    means.flags.writeable = False
    return CountryMeans(codes=tuple(codes), items=items, means=means)


def load_regions(path: str | Path) -> tuple[str, tuple[str, ...]]:
    """Read the editable region file: {"name": ..., "codes": [...]}."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if (
        not isinstance(data, dict)
        or "codes" not in data
        or not isinstance(data["codes"], list)
    ):
        raise ValidationError(f"{path}: expected an object with a 'codes' list")
    return str(data.get("name", "region")), tuple(str(c) for c in data["codes"])


def default_regions_path() -> Path:
    return Path(__file__).parent / "data" / "regions.json"
