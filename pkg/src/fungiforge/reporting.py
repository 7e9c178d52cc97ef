"""Fold statistics aggregation and report rendering.

Standard deviation uses the population form (divisor N): that is the
form under which recomputing the published per-fold tables reproduces
their printed summary rows. Losses print to 3 decimals, accuracies to
3 decimals with a percent sign.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyResults
from .harness import TrainRecord


@dataclass(frozen=True)
class FoldResult:
    fold: int  # 1..k
    loss: float
    accuracy: float  # percent in [0, 100]

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"accuracy must be a percentage, got {self.accuracy}")
        if self.loss < 0.0:
            raise ValueError(f"loss must be >= 0, got {self.loss}")


@dataclass(frozen=True)
class RunSummary:
    average_loss: float
    average_accuracy: float  # percent
    std_accuracy: float  # percent, population (divisor N)


def fold_stats(results: Sequence[FoldResult]) -> RunSummary:
    """Arithmetic means plus population standard deviation of accuracy."""
    if not results:
        raise EmptyResults("fold statistics need at least one result")
    losses = np.array([r.loss for r in results], dtype=np.float64)
    accs = np.array([r.accuracy for r in results], dtype=np.float64)
    return RunSummary(
        average_loss=float(losses.mean()),
        average_accuracy=float(accs.mean()),
        std_accuracy=float(accs.std(ddof=0)),
    )


def _fmt_loss(v: float) -> str:
    return f"{v:.3f}"


def _fmt_acc(v: float) -> str:
    return f"{v:.3f}%"


def render_table(label: str, results: Sequence[FoldResult]) -> str:
    summary = fold_stats(results)
    width = max(len(label), 24)
    lines = [label, "=" * width, f"{'Fold':<6}{'Loss':>10}{'Accuracy':>12}"]
    for r in sorted(results, key=lambda r: r.fold):
        lines.append(f"{r.fold:<6}{_fmt_loss(r.loss):>10}{_fmt_acc(r.accuracy):>12}")
    lines.append("-" * width)
    lines.append(f"Average Loss:       {_fmt_loss(summary.average_loss)}")
    lines.append(f"Average Accuracy:   {_fmt_acc(summary.average_accuracy)}")
    lines.append(f"Standard Deviation: {_fmt_acc(summary.std_accuracy)}")
    return "\n".join(lines) + "\n"


def render_report(runs: Mapping[str, Sequence[FoldResult]], out_dir) -> list[Path]:
    """Per-run fold CSV, summary CSV and text table, plus a comparison file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if not runs:
        return written

    for label, results in runs.items():
        folds_path = out_dir / f"{label}_folds.csv"
        with open(folds_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "loss", "accuracy"])
            for r in sorted(results, key=lambda r: r.fold):
                w.writerow([r.fold, _fmt_loss(r.loss), f"{r.accuracy:.3f}"])
        summary = fold_stats(results)
        summary_path = out_dir / f"{label}_summary.csv"
        with open(summary_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["statistic", "value"])
            w.writerow(["average_loss", _fmt_loss(summary.average_loss)])
            w.writerow(["average_accuracy", f"{summary.average_accuracy:.3f}"])
            w.writerow(["std_accuracy", f"{summary.std_accuracy:.3f}"])
        table_path = out_dir / f"{label}_table.txt"
        table_path.write_text(render_table(label, results), encoding="utf-8")
        written.extend([folds_path, summary_path, table_path])

    comparison = out_dir / "comparison.md"
    comparison.write_text(comparison_markdown(runs), encoding="utf-8")
    written.append(comparison)
    return written


def comparison_markdown(runs: Mapping[str, Sequence[FoldResult]]) -> str:
    """Markdown table of per-fold accuracy columns plus summary rows."""
    labels = list(runs)
    k = max(len(runs[label]) for label in labels)
    lines = ["| Fold | " + " | ".join(f"{l} loss | {l} acc" for l in labels) + " |"]
    lines.append("|" + "---|" * (1 + 2 * len(labels)))
    by_fold = {
        label: {r.fold: r for r in runs[label]} for label in labels
    }
    for fold in range(1, k + 1):
        cells = []
        for label in labels:
            r = by_fold[label].get(fold)
            cells.append(_fmt_loss(r.loss) if r else "")
            cells.append(_fmt_acc(r.accuracy) if r else "")
        lines.append(f"| {fold} | " + " | ".join(cells) + " |")
    summaries = {label: fold_stats(runs[label]) for label in labels}
    for name, pick in (
        ("Average Loss", lambda s: _fmt_loss(s.average_loss)),
        ("Average Accuracy", lambda s: _fmt_acc(s.average_accuracy)),
        ("Standard Deviation", lambda s: _fmt_acc(s.std_accuracy)),
    ):
        cells = []
        for label in labels:
            cells.extend([name, pick(summaries[label])])
        lines.append("| | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def export_curves(record: TrainRecord, path) -> Path:
    """Per-epoch curve CSV with a marker on the best validation epoch.

    Best epoch is the argmin of validation loss; ties go to the
    earliest epoch.
    """
    if not record.epochs:
        raise EmptyResults("train record has no epochs")
    best = min(range(len(record.epochs)), key=lambda i: (record.epochs[i].val_loss, i))
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc",
                    "is_best"])
        for i, e in enumerate(record.epochs):
            w.writerow([
                i + 1, f"{e.train_loss:.6f}", f"{e.train_acc:.6f}",
                f"{e.val_loss:.6f}", f"{e.val_acc:.6f}",
                1 if i == best else 0,
            ])
    return path
