"""Edge-anchored square grid patching.

Per axis of length D with patch size P there are ceil(D / P) patches;
interior offsets step by P and the final offset is anchored to the
image edge (min(i * P, D - P)), overlapping its neighbour when D is not
a multiple of P. Axes shorter than P are reflect-padded up to P before
extraction so every emitted patch is exactly P x P.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PlanMismatch
from .imaging import ImageBuffer, Rect


@dataclass(frozen=True)
class GridPlan:
    """Row-major patch rectangles for one source image."""

    source_width: int
    source_height: int
    patch_size: int
    pad_right: int
    pad_bottom: int
    rects: tuple[Rect, ...]

    @property
    def rows(self) -> int:
        return math.ceil(max(self.source_height, self.patch_size) / self.patch_size)

    @property
    def cols(self) -> int:
        return math.ceil(max(self.source_width, self.patch_size) / self.patch_size)


@dataclass(frozen=True)
class Patch:
    """One square crop plus its grid position."""

    row: int
    col: int
    image: ImageBuffer


def _axis_offsets(length: int, patch: int) -> tuple[list[int], int]:
    if length < patch:
        return [0], patch - length
    count = math.ceil(length / patch)
    return [min(i * patch, length - patch) for i in range(count)], 0


def plan_grid(width: int, height: int, patch_size: int) -> GridPlan:
    """Plan the patch grid for an image of the given dimensions."""
    if width < 1 or height < 1 or patch_size < 1:
        raise ValueError("width, height and patch_size must be >= 1")
    xs, pad_right = _axis_offsets(width, patch_size)
    ys, pad_bottom = _axis_offsets(height, patch_size)
    rects = tuple(
        Rect(x, y, patch_size, patch_size) for y in ys for x in xs
    )
    return GridPlan(width, height, patch_size, pad_right, pad_bottom, rects)


def extract_patches(img: ImageBuffer, plan: GridPlan) -> list[Patch]:
    """Cut the image into patches, pixel-exact, in the plan's order."""
    if img.width != plan.source_width or img.height != plan.source_height:
        raise PlanMismatch(
            f"plan is for {plan.source_width}x{plan.source_height}, "
            f"image is {img.width}x{img.height}"
        )
    pixels = img.pixels
    if plan.pad_right or plan.pad_bottom:
        pixels = np.pad(
            pixels,
            ((0, plan.pad_bottom), (0, plan.pad_right), (0, 0)),
            mode="reflect",
        )
    cols = plan.cols
    patches = []
    for i, rect in enumerate(plan.rects):
        crop = pixels[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w].copy()
        patches.append(Patch(row=i // cols, col=i % cols, image=ImageBuffer(crop)))
    return patches


def patch_id(source_name: str, row: int, col: int) -> str:
    """Deterministic id "<source-stem>_r<row>_c<col>", unique per source."""
    if row < 0 or col < 0:
        raise ValueError("row and col must be non-negative")
    return f"{Path(source_name).stem}_r{row}_c{col}"
