"""Published 10-fold reference results for the five-class DeFungi task.

Per-fold loss/accuracy pairs as printed for VGG16, Inception V3 and
ResNet50, in transfer-learning and trained-from-scratch runs, together
with the printed summary rows. Recomputing the aggregates from the
fold data reproduces every printed value except the transfer table's
average-accuracy row, where the ResNet50 and VGG16 cells appear
swapped: the fold data puts 85.040% on VGG16 and 83.040% on ResNet50.
The consistency check below detects exactly that swap, and rendered
reports carry the corrected values with a footnote.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .reporting import FoldResult, fold_stats

TOLERANCE = 0.001


@dataclass(frozen=True)
class PublishedRun:
    model: str
    mode: str  # transfer | scratch
    folds: tuple[tuple[float, float], ...]  # (loss, accuracy percent) per fold
    printed_average_loss: float
    printed_average_accuracy: float
    printed_std_accuracy: float

    @property
    def label(self) -> str:
        return f"{self.model}_{self.mode}"

    def fold_results(self) -> list[FoldResult]:
        return [FoldResult(fold=i + 1, loss=l, accuracy=a)
                for i, (l, a) in enumerate(self.folds)]


PUBLISHED = (
    PublishedRun(
        model="ResNet50", mode="transfer",
        folds=(
            (0.894, 85.199), (0.968, 83.600), (0.865, 85.600), (0.715, 80.000),
            (0.814, 82.800), (1.118, 83.999), (1.099, 80.000), (0.680, 83.999),
            (0.692, 84.399), (0.927, 80.800),
        ),
        printed_average_loss=0.877,
        printed_average_accuracy=85.040,  # swapped with VGG16 in print
        printed_std_accuracy=1.969,
    ),
    PublishedRun(
        model="VGG16", mode="transfer",
        folds=(
            (0.604, 84.799), (0.674, 82.400), (0.447, 88.800), (0.523, 85.600),
            (0.680, 83.999), (0.573, 83.200), (0.498, 86.799), (0.760, 84.399),
            (0.748, 83.600), (0.440, 86.799),
        ),
        printed_average_loss=0.5947,
        printed_average_accuracy=83.040,  # swapped with ResNet50 in print
        printed_std_accuracy=1.861,
    ),
    PublishedRun(
        model="InceptionV3", mode="transfer",
        folds=(
            (0.815, 79.600), (0.399, 87.999), (0.757, 80.000), (0.762, 83.600),
            (0.742, 76.399), (0.640, 82.800), (0.719, 84.799), (0.946, 81.999),
            (0.763, 82.400), (0.406, 88.400),
        ),
        printed_average_loss=0.6949,
        printed_average_accuracy=82.800,
        printed_std_accuracy=3.505,
    ),
    PublishedRun(
        model="ResNet50", mode="scratch",
        folds=(
            (0.905, 62.40), (0.970, 62.00), (0.770, 68.80), (0.741, 66.80),
            (0.796, 70.00), (0.989, 62.40), (0.786, 68.80), (0.770, 70.80),
            (0.927, 61.60), (0.854, 67.60),
        ),
        printed_average_loss=0.8508,
        printed_average_accuracy=66.120,
        printed_std_accuracy=3.450,
    ),
    PublishedRun(
        model="VGG16", mode="scratch",
        folds=(
            (0.673, 72.40), (0.764, 74.40), (0.716, 68.80), (0.709, 68.80),
            (0.776, 68.00), (0.675, 73.20), (0.627, 76.80), (0.646, 71.60),
            (0.724, 69.60), (0.745, 71.20),
        ),
        printed_average_loss=0.7055,
        printed_average_accuracy=71.480,
        printed_std_accuracy=2.660,
    ),
    PublishedRun(
        model="InceptionV3", mode="scratch",
        # The printed summary labels this column's loss row "Average
        # Accuracy"; the value matches the loss mean, so it is stored
        # as the loss aggregate here.
        folds=(
            (0.738, 71.60), (0.808, 70.00), (0.633, 74.00), (0.616, 74.00),
            (0.722, 75.20), (0.747, 72.80), (0.705, 74.80), (0.699, 73.60),
            (0.860, 71.20), (0.580, 75.60),
        ),
        printed_average_loss=0.7108,
        printed_average_accuracy=73.280,
        printed_std_accuracy=1.751,
    ),
)


@dataclass(frozen=True)
class RunCheck:
    label: str
    recomputed_average_loss: float
    recomputed_average_accuracy: float
    recomputed_std_accuracy: float
    loss_ok: bool
    accuracy_ok: bool
    std_ok: bool


@dataclass(frozen=True)
class ConsistencyReport:
    checks: tuple[RunCheck, ...]
    transfer_accuracy_swapped: bool

    @property
    def all_stds_match(self) -> bool:
        return all(c.std_ok for c in self.checks)

    @property
    def all_losses_match(self) -> bool:
        return all(c.loss_ok for c in self.checks)


def recompute(run: PublishedRun):
    return fold_stats(run.fold_results())


def check_consistency(tolerance: float = TOLERANCE) -> ConsistencyReport:
    """Recompute all six columns and detect the transfer-table swap."""
    checks = []
    recomputed = {}
    for run in PUBLISHED:
        s = recompute(run)
        recomputed[run.label] = s
        checks.append(RunCheck(
            label=run.label,
            recomputed_average_loss=s.average_loss,
            recomputed_average_accuracy=s.average_accuracy,
            recomputed_std_accuracy=s.std_accuracy,
            loss_ok=abs(s.average_loss - run.printed_average_loss) <= tolerance,
            accuracy_ok=abs(s.average_accuracy - run.printed_average_accuracy)
            <= tolerance,
            std_ok=abs(s.std_accuracy - run.printed_std_accuracy) <= tolerance,
        ))

    printed = {run.label: run for run in PUBLISHED}
    res = printed["ResNet50_transfer"]
    vgg = printed["VGG16_transfer"]
    swapped = (
        abs(res.printed_average_accuracy
            - recomputed["VGG16_transfer"].average_accuracy) <= tolerance
        and abs(vgg.printed_average_accuracy
                - recomputed["ResNet50_transfer"].average_accuracy) <= tolerance
        and abs(res.printed_average_accuracy
                - recomputed["ResNet50_transfer"].average_accuracy) > tolerance
    )
    return ConsistencyReport(checks=tuple(checks), transfer_accuracy_swapped=swapped)


def corrected_average_accuracy(run: PublishedRun) -> float:
    """Fold-derived mean accuracy (the corrected value where swapped)."""
    return recompute(run).average_accuracy


def published_markdown() -> str:
    """Reference tables rendered from the fold data with the swap footnote."""
    report = check_consistency()
    lines = []
    for mode, title in (("transfer", "Transfer learning, 10-fold test"),
                        ("scratch", "From scratch, 10-fold test")):
        runs = [r for r in PUBLISHED if r.mode == mode]
        lines.append(f"## {title}")
        lines.append("")
        header = "| Fold | " + " | ".join(
            f"{r.model} loss | {r.model} acc" for r in runs) + " |"
        lines.append(header)
        lines.append("|" + "---|" * (1 + 2 * len(runs)))
        for i in range(10):
            cells = []
            for r in runs:
                loss, acc = r.folds[i]
                cells.extend([f"{loss:.3f}", f"{acc:.3f}%"])
            lines.append(f"| {i + 1} | " + " | ".join(cells) + " |")
        for stat, fmt in (
            ("Average Loss", lambda s: f"{s.average_loss:.3f}"),
            ("Average Accuracy", lambda s: f"{s.average_accuracy:.3f}%"),
            ("Standard Deviation", lambda s: f"{s.std_accuracy:.3f}%"),
        ):
            cells = []
            for r in runs:
                cells.extend([stat, fmt(recompute(r))])
            lines.append("| | " + " | ".join(cells) + " |")
        lines.append("")
    if report.transfer_accuracy_swapped:
        lines.append(
            "Note: the originally printed transfer-table average-accuracy row "
            "shows 85.040% under ResNet50 and 83.040% under VGG16; the fold "
            "data gives the reverse, so the corrected values above follow the "
            "fold data (VGG16 85.040%)."
        )
        lines.append("")
    return "\n".join(lines)
