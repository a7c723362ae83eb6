"""Report emission: delimited check tables plus rendered figures.

The CSV schema is one row per check: check, mean, stderr, reference, ratio,
verdict. Floats are written with repr so reruns with the same seed produce
byte-identical files. When figures are enabled, a PNG summarizing the checks
is rendered next to the CSV.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .harness import CheckResult, SimReport

CSV_HEADER = "check,mean,stderr,reference,ratio,verdict"


def _fmt(x: float) -> str:
    if x != x:  # NaN
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def checks_to_csv(checks: Sequence[CheckResult]) -> str:
    lines = [CSV_HEADER]
    for c in checks:
        lines.append(",".join([
            c.label, _fmt(c.mean), _fmt(c.stderr), _fmt(c.reference),
            _fmt(c.ratio), c.verdict,
        ]))
    return "\n".join(lines) + "\n"


def write_report(checks: Sequence[CheckResult], out_path, figure: bool = True) -> Path:
    """Write the CSV; render the companion figure unless disabled."""
    out = Path(out_path)
    out.write_text(checks_to_csv(checks))
    if figure:
        render_checks_figure(checks, out.with_suffix(".png"))
    return out


def render_checks_figure(checks: Sequence[CheckResult], png_path) -> Path:
    """Horizontal bars of achieved mean vs required reference, one per check."""
    png = Path(png_path)
    checks = list(checks)
    if not checks:
        checks = []
    labels = [c.label for c in checks]
    means = [c.mean for c in checks]
    refs = [c.reference for c in checks]
    colors = ["#2a9d3a" if c.verdict == "pass" else
              "#aaaaaa" if c.verdict == "skip" else "#c0392b" for c in checks]
    height = max(2.0, 0.45 * len(checks) + 1.2)
    fig, ax = plt.subplots(figsize=(8.0, height))
    ypos = range(len(checks))
    ax.barh(list(ypos), means, color=colors, alpha=0.85, label="achieved mean")
    for y, r in zip(ypos, refs):
        if math.isfinite(r):
            ax.plot([r, r], [y - 0.4, y + 0.4], color="black", lw=1.6)
    ax.set_yticks(list(ypos))
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("reward / value (black tick = required bound)")
    ax.set_title("guarantee checks")
    fig.tight_layout()
    fig.savefig(png, dpi=120, metadata={"Software": "stocpack"})
    plt.close(fig)
    return png


def render_histogram(report: SimReport, rewards_hint: str, png_path) -> Path:
    """Small companion figure for a SimReport: mean with the 95% interval."""
    png = Path(png_path)
    fig, ax = plt.subplots(figsize=(5.0, 2.4))
    ax.errorbar([0], [report.mean_reward], yerr=[report.ci95], fmt="o", capsize=6)
    ax.set_xticks([0])
    ax.set_xticklabels([rewards_hint], fontsize=8)
    ax.set_ylabel("mean credited reward")
    fig.tight_layout()
    fig.savefig(png, dpi=120, metadata={"Software": "stocpack"})
    plt.close(fig)
    return png
