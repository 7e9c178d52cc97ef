"""Deterministic five-class synthetic corpus.

Procedural textures stand in for the five morphology classes so every
pipeline stage is testable without the real dataset: wavy stripes
(TSH), bead lattices (BASH), coarse mosaics (GMA), concentric rings
(SHC) and broad bands (BBH), each with its own colour cast. Every
third image gets a black side band (lens-contour stand-in) and every
third a blank strip, so the automatic filters have something to catch.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dataset import CLASS_ORDER
from .imaging import ImageBuffer, save_png
from .rng import derive_key

_BACKGROUND = np.array([235.0, 228.0, 220.0])

_FOREGROUND = {
    "TSH": np.array([170.0, 60.0, 45.0]),
    "BASH": np.array([60.0, 150.0, 60.0]),
    "GMA": np.array([55.0, 85.0, 175.0]),
    "SHC": np.array([145.0, 65.0, 160.0]),
    "BBH": np.array([120.0, 80.0, 30.0]),
}


def _texture_mask(cls: str, w: int, h: int, rng: np.random.Generator) -> np.ndarray:
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    phase = rng.uniform(0, 2 * np.pi)
    scale = rng.uniform(0.85, 1.15)
    if cls == "TSH":
        wave = 7.0 * np.sin(2 * np.pi * yy / (46.0 * scale) + phase)
        t = np.sin(2 * np.pi * (xx + yy * 0.6 + wave) / (26.0 * scale))
        return (t > 0.1).astype(np.float64)
    if cls == "BASH":
        spacing = 24.0 * scale
        gx = (xx + 8 * np.sin(phase)) % spacing - spacing / 2
        gy = (yy + 8 * np.cos(phase)) % spacing - spacing / 2
        return (gx * gx + gy * gy < (6.5 * scale) ** 2).astype(np.float64)
    if cls == "GMA":
        block = max(int(20 * scale), 8)
        bi = (xx // block).astype(np.int64)
        bj = (yy // block).astype(np.int64)
        salt = int(rng.integers(0, 1 << 31))
        hashed = (bi * 2654435761 + bj * 40503 + salt) % 97
        return ((hashed < 55) & ((bi + bj) % 2 == 0)).astype(np.float64)
    if cls == "SHC":
        cx = w / 2 + rng.uniform(-w / 6, w / 6)
        cy = h / 2 + rng.uniform(-h / 6, h / 6)
        r = np.hypot(xx - cx, yy - cy)
        return (np.sin(2 * np.pi * r / (30.0 * scale) + phase) > 0.25).astype(np.float64)
    if cls == "BBH":
        t = np.sin(2 * np.pi * yy / (56.0 * scale) + phase)
        return (t > -0.2).astype(np.float64)
    raise ValueError(f"unknown class {cls!r}")


def make_image(cls: str, index: int, width: int, height: int,
               seed: int) -> ImageBuffer:
    """One deterministic synthetic photograph for (class, index)."""
    rng = np.random.default_rng(derive_key(seed, "synth", cls, index))
    mask = _texture_mask(cls, width, height, rng)
    img = _BACKGROUND[None, None, :] + (
        (_FOREGROUND[cls] - _BACKGROUND)[None, None, :] * mask[:, :, None]
    )

    kind = index % 3
    band = int(width * 0.36)
    if kind == 1:  # black lens-contour band on the left
        img[:, :band, :] = 6.0
    elif kind == 2:  # blank strip on the right
        img[:, width - band :, :] = _BACKGROUND[None, None, :]

    img = img + rng.normal(0.0, 4.5, size=img.shape)
    return ImageBuffer(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def generate_corpus(out_dir, per_class: int = 6, width: int = 280,
                    height: int = 200, seed: int = 1234) -> dict[str, str]:
    """Write PNGs plus labels.csv; returns the source -> class mapping."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels: dict[str, str] = {}
    for cls in CLASS_ORDER:
        for i in range(per_class):
            name = f"{cls.lower()}_{i:03d}.png"
            save_png(make_image(cls, i, width, height, seed), out_dir / name)
            labels[name] = cls
    with open(out_dir / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "class"])
        for name, cls in labels.items():
            w.writerow([name, cls])
    return labels
