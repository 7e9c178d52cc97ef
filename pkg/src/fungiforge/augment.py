"""Seeded train-set-only augmentation.

Flips, right-angle rotations and mild brightness jitter: all label-
preserving on microscopy patches, which have no canonical orientation.
Draws come from an explicit stream in a fixed order, so a given
(seed, policy) reproduces the identical augmented epoch everywhere.
Applied on the fly during batch assembly; nothing is materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import ImageBuffer
from .rng import PortableRng


@dataclass(frozen=True)
class AugmentPolicy:
    horizontal_flip: float = 0.5
    vertical_flip: float = 0.5
    rotate: bool = True  # uniform choice of 0/90/180/270 degrees
    brightness_jitter: float = 0.05  # max |delta| in luminance units

    def __post_init__(self):
        if not 0.0 <= self.horizontal_flip <= 1.0:
            raise ValueError("horizontal_flip must be a probability")
        if not 0.0 <= self.vertical_flip <= 1.0:
            raise ValueError("vertical_flip must be a probability")
        if not 0.0 <= self.brightness_jitter <= 0.5:
            raise ValueError("brightness_jitter must be in [0, 0.5]")

    def to_dict(self) -> dict:
        return {
            "horizontal_flip": self.horizontal_flip,
            "vertical_flip": self.vertical_flip,
            "rotate": self.rotate,
            "brightness_jitter": self.brightness_jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentPolicy":
        return cls(
            horizontal_flip=float(d.get("horizontal_flip", 0.5)),
            vertical_flip=float(d.get("vertical_flip", 0.5)),
            rotate=bool(d.get("rotate", True)),
            brightness_jitter=float(d.get("brightness_jitter", 0.05)),
        )

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(horizontal_flip=0.0, vertical_flip=0.0, rotate=False,
                   brightness_jitter=0.0)


def augment_array(x: np.ndarray, policy: AugmentPolicy, stream: PortableRng) -> np.ndarray:
    """Augment one square (h, w, 3) float array with values in [0, 1].

    Draw order is fixed: horizontal flip, vertical flip, rotation
    (only when enabled), jitter (only when nonzero). Jitter is additive
    and clamped to [0, 1]; output dimensions always equal the input's.
    """
    if x.ndim != 3 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected a square (h, w, c) array, got {x.shape}")
    if stream.random() < policy.horizontal_flip:
        x = x[:, ::-1]
    if stream.random() < policy.vertical_flip:
        x = x[::-1]
    if policy.rotate:
        x = np.rot90(x, k=stream.randbelow(4))
    if policy.brightness_jitter > 0.0:
        delta = stream.uniform(-policy.brightness_jitter, policy.brightness_jitter)
        x = np.clip(x + np.asarray(delta, dtype=x.dtype), 0.0, 1.0)
    return np.ascontiguousarray(x)


def augment(patch_image: ImageBuffer, policy: AugmentPolicy,
            stream: PortableRng) -> ImageBuffer:
    """8-bit wrapper around augment_array for standalone patch use."""
    unit = patch_image.pixels.astype(np.float64) / 255.0
    out = augment_array(unit, policy, stream)
    return ImageBuffer(np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8))
