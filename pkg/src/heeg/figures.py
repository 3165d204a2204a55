"""Figure rendering for report outputs.

Only the command-line report path calls these; library consumers get
the delimited files and may plot however they like. The Agg backend is
forced so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import EvalReport, SpanReport
from .errors import ValidationError


def _finish(fig, path: str) -> None:
    fig.tight_layout()
    # strip the Software tag so identical runs write identical bytes
    fig.savefig(path, format="png", dpi=110, metadata={"Software": None})
    plt.close(fig)


def render_suite_figure(path: str, report: EvalReport) -> None:
    """Bar chart: suite-level normalized accuracy per (mode, way label)."""
    if not report.suite:
        raise ValidationError("report has no suite rows")
    labels = [f"{s.mode}\n{s.way_label}-way" for s in report.suite]
    means = [s.mean for s in report.suite]
    stds = [s.std for s in report.suite]
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(labels), 3.6))
    ax.bar(range(len(labels)), means, yerr=stds, capsize=3, color="#4878cf")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(range(len(labels)), labels, fontsize=8)
    ax.set_ylabel("normalized accuracy")
    _finish(fig, path)


def render_span_figure(path: str, span: SpanReport) -> None:
    """Mean normalized accuracy per span bin, one line per (mode, way)."""
    if not span.bins:
        raise ValidationError("span report has no bins")
    groups: dict[tuple[str, str], list[tuple[str, float]]] = {}
    for b in span.bins:
        groups.setdefault((b.mode, b.way_label), []).append((b.bin, b.mean))
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for (mode, way_label), points in sorted(groups.items()):
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.plot(xs, ys, marker="o", label=f"{mode} {way_label}-way")
    ax.set_xlabel("span bin")
    ax.set_ylabel("normalized accuracy")
    ax.legend(fontsize=8)
    _finish(fig, path)


def render_word_scatter(path: str, rows: list[tuple[str, int, float]]) -> None:
    """Per-concept scatter of span length vs accuracy, words annotated."""
    if not rows:
        raise ValidationError("no word rows to render")
    spans = [r[1] for r in rows]
    accs = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(5.6, 4.0))
    ax.scatter(spans, accs, s=18, color="#d65f5f")
    for word, s, a in rows[:60]:  # cap annotations to keep the plot legible
        ax.annotate(word, (s, a), fontsize=6, alpha=0.75)
    ax.set_xlabel("span length")
    ax.set_ylabel("normalized accuracy")
    _finish(fig, path)


def render_abstraction_figure(
    path: str, rows: list[tuple[int, str, float]]
) -> None:
    """Suite accuracy vs abstraction level; rows are (h, mode, mean)."""
    if not rows:
        raise ValidationError("no abstraction rows to render")
    modes = sorted({mode for _, mode, _ in rows})
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for mode in modes:
        pts = sorted((h, m) for h, md, m in rows if md == mode)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=mode)
    ax.set_xlabel("abstraction level (h)")
    ax.set_ylabel("normalized accuracy")
    ax.set_xticks(sorted({h for h, _, _ in rows}))
    ax.legend(fontsize=8)
    _finish(fig, path)


def render_training_curve(path: str, losses: list[float], title: str) -> None:
    if not losses:
        raise ValidationError("no loss values to render")
    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    ax.plot(np.arange(1, len(losses) + 1), losses, color="#4878cf")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title, fontsize=9)
    _finish(fig, path)
