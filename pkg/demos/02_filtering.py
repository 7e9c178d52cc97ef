#!/usr/bin/env python3
"""Artifact filtering walkthrough: dark and blank patches are rejected
automatically, borderline contrast goes to human review.

Checks run in a fixed order: dark first (lens contours also have near-
zero contrast), then blank, then the review band, then keep.
"""

import numpy as np

from fungiforge.filtering import (
    FilterThresholds,
    calibrate_thresholds,
    classify_patch,
    keep_f1,
)
from fungiforge.imaging import ImageBuffer


def solid(v, n=64):
    return ImageBuffer(np.full((n, n, 3), v, dtype=np.uint8))


def two_tone(lo, hi, n=64):
    yy, xx = np.mgrid[0:n, 0:n]
    mask = ((xx + yy) % 2).astype(np.uint8)
    return ImageBuffer((lo + (hi - lo) * mask)[:, :, None].repeat(3, 2))


t = FilterThresholds()
print(f"thresholds: dark_mean={t.dark_mean} dark_p95={t.dark_p95} "
      f"blank_contrast={t.blank_contrast} review_band={t.review_band}\n")

cases = [
    ("all black (lens contour)", solid(0)),
    ("uniform bright (blank field)", solid(230)),
    ("strong texture (hyphae-like)", two_tone(26, 230)),
    ("faint texture (borderline)", two_tone(128, 150)),
]
print(f"{'patch':32s} {'verdict':14s} {'mean':>7s} {'p95':>7s} {'michelson':>10s}")
for name, patch in cases:
    v = classify_patch(patch, t)
    s = v.stats
    print(f"{name:32s} {v.verdict.value:14s} {s.mean:7.3f} {s.p95:7.3f} "
          f"{s.michelson:10.3f}")

# Threshold calibration against a small human-labelled session: grid
# search maximizing F1 of the automatic Keep verdict.
labeled = [(solid(v), False) for v in (0, 8, 16, 24)]
labeled += [(solid(v), False) for v in (190, 210, 230, 250)]
labeled += [(two_tone(lo, hi), True)
            for lo, hi in ((26, 230), (51, 204), (13, 242), (77, 178))]
fitted = calibrate_thresholds(labeled)
print(f"\ncalibrated on {len(labeled)} labelled patches -> {fitted}")
print(f"F1 at calibrated thresholds: {keep_f1(labeled, fitted):.3f}")
