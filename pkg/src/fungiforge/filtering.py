"""Automatic rejection of black lens-contour and blank patches.

Verdicts are evaluated in a fixed order: dark first (black contour
regions also have near-zero contrast, so the dark check must win),
then blank, then a review band routing borderline-contrast patches to
a human, then keep. Manual verdicts are sticky: the automatic pass
never overwrites them.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import InsufficientLabels, MissingPatchFile
from .imaging import (
    ImageBuffer,
    RegionStats,
    full_rect,
    load_image,
    region_stats,
    to_luminance,
)
from .patching import Patch

if TYPE_CHECKING:
    from .dataset import Manifest


class Verdict(str, Enum):
    KEEP = "Keep"
    REJECT_DARK = "RejectDark"
    REJECT_BLANK = "RejectBlank"
    NEEDS_REVIEW = "NeedsReview"
    MANUAL_KEEP = "ManualKeep"
    MANUAL_REJECT = "ManualReject"

    @property
    def is_manual(self) -> bool:
        return self in (Verdict.MANUAL_KEEP, Verdict.MANUAL_REJECT)

    @property
    def is_eligible(self) -> bool:
        """Eligible for split/fold assignment."""
        return self in (Verdict.KEEP, Verdict.MANUAL_KEEP)


@dataclass(frozen=True)
class FilterThresholds:
    """Decision boundaries on luminance statistics, all in [0, 1].

    Defaults are calibrated against the synthetic fixtures; the blank
    cut sits well below the dark cuts so genuinely dark artefacts are
    never misfiled as merely blank.
    """

    dark_mean: float = 0.12
    dark_p95: float = 0.20
    blank_contrast: float = 0.06
    review_band: float = 0.04

    def __post_init__(self):
        for name in ("dark_mean", "dark_p95", "blank_contrast", "review_band"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.review_band >= self.dark_mean:
            raise ValueError("review_band must be < dark_mean")
        if self.blank_contrast >= self.dark_p95:
            raise ValueError("blank_contrast must be < dark_p95")

    def to_dict(self) -> dict:
        return {
            "dark_mean": self.dark_mean,
            "dark_p95": self.dark_p95,
            "blank_contrast": self.blank_contrast,
            "review_band": self.review_band,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterThresholds":
        return cls(**{k: float(d[k]) for k in
                      ("dark_mean", "dark_p95", "blank_contrast", "review_band")})


@dataclass(frozen=True)
class PatchVerdict:
    """A verdict plus the statistics that produced it."""

    verdict: Verdict
    stats: RegionStats


def _image_of(patch) -> ImageBuffer:
    if isinstance(patch, Patch):
        return patch.image
    if isinstance(patch, ImageBuffer):
        return patch
    raise TypeError(f"expected Patch or ImageBuffer, got {type(patch).__name__}")


def patch_stats(patch) -> RegionStats:
    plane = to_luminance(_image_of(patch))
    return region_stats(plane, full_rect(plane))


def classify_patch(patch, t: FilterThresholds) -> PatchVerdict:
    """Automatic verdict for one patch; pure in (pixels, thresholds)."""
    stats = patch_stats(patch)
    return PatchVerdict(classify_stats(stats, t), stats)


def classify_stats(stats: RegionStats, t: FilterThresholds) -> Verdict:
    if stats.mean < t.dark_mean or stats.p95 < t.dark_p95:
        return Verdict.REJECT_DARK
    if stats.michelson < t.blank_contrast:
        return Verdict.REJECT_BLANK
    if stats.michelson < t.blank_contrast + t.review_band:
        return Verdict.NEEDS_REVIEW
    return Verdict.KEEP


@dataclass(frozen=True)
class ReportEntry:
    patch_id: str
    verdict: Verdict
    stats: RegionStats


@dataclass
class FilterReport:
    entries: list[ReportEntry]

    @property
    def counts(self) -> dict[str, int]:
        c = Counter(e.verdict.value for e in self.entries)
        return {v.value: c.get(v.value, 0) for v in Verdict}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["patch_id", "verdict", "mean", "p05", "p95", "michelson"])
            for e in self.entries:
                s = e.stats
                w.writerow([
                    e.patch_id, e.verdict.value,
                    f"{s.mean:.6f}", f"{s.p05:.6f}", f"{s.p95:.6f}",
                    f"{s.michelson:.6f}",
                ])


def filter_run(manifest: "Manifest", t: FilterThresholds, patch_dir) -> FilterReport:
    """Assign a verdict to every manifest row; manual verdicts stay put.

    Rerunning with the same thresholds and files yields an identical
    report. Raises MissingPatchFile when a row's patch is absent.
    """
    patch_dir = Path(patch_dir)
    entries = []
    for row in manifest.rows():
        path = patch_dir / f"{row.patch_id}.png"
        if not path.is_file():
            raise MissingPatchFile(f"no patch file for {row.patch_id}: {path}")
        stats = patch_stats(load_image(path))
        if not row.verdict.is_manual:
            row.verdict = classify_stats(stats, t)
        entries.append(ReportEntry(row.patch_id, row.verdict, stats))
    return FilterReport(entries)


_GRID = np.arange(101) / 100.0  # candidate thresholds, step 0.01


def calibrate_thresholds(
    labeled: Sequence[tuple], review_band: float = 0.04
) -> FilterThresholds:
    """Fit thresholds to human keep/reject labels by exhaustive grid search.

    Maximizes F1 of the automatic Keep verdict against the human keep
    label over all (dark_mean, dark_p95, keep boundary) combinations at
    step 0.01. F1 depends on blank_contrast and review_band only
    through their sum (the boundary below which a patch is not kept),
    so the band is held at `review_band` and the blank cut absorbs the
    rest. Ties go to the smallest thresholds in scan order, i.e. the
    smallest rejection region.
    """
    keeps = sum(1 for _, keep in labeled if keep)
    rejects = len(labeled) - keeps
    if keeps < 2 or rejects < 2:
        raise InsufficientLabels(
            f"need >= 2 labels of each kind, got {keeps} keep / {rejects} reject"
        )

    stats = [patch_stats(p) for p, _ in labeled]
    mean = np.array([s.mean for s in stats])
    p95 = np.array([s.p95 for s in stats])
    mich = np.array([s.michelson for s in stats])
    human = np.array([1.0 if keep else 0.0 for _, keep in labeled])

    a_pass = (mean[None, :] >= _GRID[:, None]).astype(np.float64)
    b_pass = (p95[None, :] >= _GRID[:, None]).astype(np.float64)
    s_pass = (mich[None, :] >= _GRID[:, None]).astype(np.float64)

    tp = np.einsum("ai,bi,si,i->abs", a_pass, b_pass, s_pass, human, optimize=True)
    pp = np.einsum("ai,bi,si->abs", a_pass, b_pass, s_pass, optimize=True)
    f1 = 2.0 * tp / (pp + human.sum())

    # Mask combinations that cannot be expressed as valid thresholds.
    a = _GRID[:, None, None]
    b = _GRID[None, :, None]
    s = _GRID[None, None, :]
    blank = np.maximum(s - review_band, 0.0)
    band = np.minimum(s, review_band)
    valid = (band < a) & (blank < b)
    f1 = np.where(valid, f1, -1.0)

    ai, bi, si = np.unravel_index(int(np.argmax(f1)), f1.shape)
    boundary = _GRID[si]
    if boundary >= review_band:
        blank_v, band_v = round(boundary - review_band, 2), review_band
    else:
        blank_v, band_v = 0.0, round(boundary, 2)
    return FilterThresholds(
        dark_mean=round(float(_GRID[ai]), 2),
        dark_p95=round(float(_GRID[bi]), 2),
        blank_contrast=round(float(blank_v), 2),
        review_band=round(float(band_v), 2),
    )


def keep_f1(labeled: Iterable[tuple], t: FilterThresholds) -> float:
    """F1 of the automatic Keep verdict against human keep labels."""
    tp = fp = fn = 0
    for patch, keep in labeled:
        predicted = classify_patch(patch, t).verdict is Verdict.KEEP
        if predicted and keep:
            tp += 1
        elif predicted and not keep:
            fp += 1
        elif not predicted and keep:
            fn += 1
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)
