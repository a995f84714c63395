"""Matplotlib figure rendering for the report pipeline.

Figures are rendered headlessly to PNG next to the tidy data files they
visualize. Rendering is deterministic for fixed inputs, which the
report-level byte-identity tests rely on.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .core import OrdinalScale  # noqa: E402

_DPI = 150


def save_share_bars(
    path: str | Path,
    scale: OrdinalScale,
    series: Mapping[str, Sequence[float]],
    intervals: Mapping[str, tuple[Sequence[float], Sequence[float]]] | None = None,
    title: str = "",
) -> None:
    """Grouped bars of category shares, one group of bars per category.

    ``series`` maps a legend label to a K-vector of shares; optional
    ``intervals`` supplies (low, high) vectors drawn as error whiskers.
    """
    k = scale.size
    n_series = max(len(series), 1)
    width = 0.8 / n_series
    fig, ax = plt.subplots(figsize=(1.6 * k + 2.5, 4.0))
    for i, (label, values) in enumerate(series.items()):
        offsets = [c - 0.4 + (i + 0.5) * width for c in range(k)]
        err = None
        if intervals and label in intervals:
            low, high = intervals[label]
            err = [
                [max(v - lo, 0.0) for v, lo in zip(values, low)],
                [max(hi - v, 0.0) for v, hi in zip(values, high)],
            ]
        ax.bar(offsets, list(values), width=width, label=label,
               yerr=err, capsize=2 if err else None)
    ax.set_xticks(range(k))
    ax.set_xticklabels(scale.labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("share of responses")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_consistency_hist(
    path: str | Path,
    sum_betas: Sequence[float],
    sum_family_effects: Sequence[float],
    title: str = "",
) -> None:
    """Histograms of the two adding-up statistics across bootstrap draws."""
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for ax, draws, ref, label in (
        (axes[0], sum_betas, 0.0, "sum of category slopes"),
        (axes[1], sum_family_effects, 1.0, "mean sum of family effects"),
    ):
        values = [float(v) for v in draws]
        lo, hi = min(values), max(values)
        if hi - lo < 1e-12:
            # identities hold to solver precision, so the draws collapse
            # to a spike; give the histogram a visible window around it
            pad = max(1e-6, abs(lo) * 1e-6)
            span = (lo - pad, lo + pad)
        else:
            span = (lo, hi)
        ax.hist(values, bins=30, range=span, color="tab:blue")
        ax.axvline(ref, color="black", linestyle="--", linewidth=1)
        ax.set_xlabel(label)
        ax.set_ylabel("replicates")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
