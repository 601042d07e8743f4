"""Report rendering: aligned text tables and matplotlib figures.

Figures carry a fixed Software tag instead of the library version so
rerunning a pipeline yields byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import DatasetReport

_PNG_METADATA = {"Software": "posegrid"}


def format_table(headers, rows) -> str:
    """Monospace table; numeric cells are rendered by str()."""
    cells = [[str(h) for h in headers]]
    for row in rows:
        cells.append([str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for index, row in enumerate(cells):
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
        if index == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def save_pr_figure(path, report: DatasetReport, title: str = "precision-recall") -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ax.plot(
        report.pooled.recalls,
        report.pooled.precisions,
        drawstyle="steps-post",
        label=f"pooled (AP {report.pooled.ap:.4f})",
    )
    if len(report.per_model) > 1:
        for name, curve in sorted(report.per_model.items()):
            ax.plot(
                curve.recalls,
                curve.precisions,
                drawstyle="steps-post",
                alpha=0.7,
                label=f"{name} (AP {curve.ap:.4f})",
            )
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.05)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower left")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)


def save_coverage_figure(path, rows) -> None:
    """Bar chart of captured vs missed objects; rows are mappings with
    variant / captured / missed entries."""
    variants = [str(r["variant"]) for r in rows]
    captured = [int(r["captured"]) for r in rows]
    missed = [int(r["missed"]) for r in rows]
    x = range(len(variants))
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.bar(x, captured, width=0.6, label="captured", color="#4a7fb5")
    ax.bar(
        x,
        missed,
        width=0.6,
        bottom=captured,
        label="missed",
        color="#c45a4a",
    )
    ax.set_xticks(list(x))
    ax.set_xticklabels(variants)
    ax.set_ylabel("eligible objects")
    ax.set_title("ground-truth assignment coverage per variant")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)


def evaluation_tables(report: DatasetReport) -> str:
    scene_rows = [
        (
            r.scene_id,
            r.eligible,
            r.tp,
            r.fp,
            r.discarded,
            r.missed,
            f"{r.curve.ap:.6f}",
        )
        for r in report.scenes
    ]
    text = format_table(
        ("scene", "eligible", "tp", "fp", "discarded", "missed", "ap"), scene_rows
    )
    text += "\n"
    summary_rows = [("pooled", f"{report.pooled.ap:.6f}"), ("macro", f"{report.macro_ap:.6f}")]
    for name, curve in sorted(report.per_model.items()):
        summary_rows.append((f"model {name}", f"{curve.ap:.6f}"))
    text += format_table(("aggregate", "ap"), summary_rows)
    return text
