"""Matplotlib rendering of the per-mode metric table."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

if TYPE_CHECKING:
    from .evaluation import MetricsTable

_RATE_FIELDS = (
    ("precision", "Precision"),
    ("actionable_rate", "Actionable"),
    ("duplicate_rate", "Duplicate"),
    ("severity_agreement", "Severity agr."),
)


def render_metrics_figure(table: "MetricsTable", path: str | Path) -> Path:
    """Grouped bars of the rate metrics per mode, saved alongside the delimited exports."""
    modes = [row.mode.value for row in table.rows]
    n_modes = max(len(modes), 1)
    x = np.arange(n_modes, dtype=float)
    width = 0.8 / len(_RATE_FIELDS)

    fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * n_modes), 4.0))
    for i, (field, label) in enumerate(_RATE_FIELDS):
        heights = []
        for row in table.rows:
            value = getattr(row, field)
            heights.append(0.0 if value is None else value)
        ax.bar(x + (i - (len(_RATE_FIELDS) - 1) / 2) * width, heights, width, label=label)

    ax.set_xticks(x)
    ax.set_xticklabels(modes or ["(none)"])
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("rate")
    ax.set_title("Review metrics by mode")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
