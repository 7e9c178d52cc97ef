#!/usr/bin/env python3
"""Grid planning walkthrough: how raw photographs become square patches.

Patch offsets step by the patch size; the final row/column is anchored
to the image edge (overlapping its neighbour), and axes shorter than
one patch are reflect-padded, so every patch is uniform.
"""

import numpy as np

from fungiforge.imaging import ImageBuffer
from fungiforge.patching import extract_patches, patch_id, plan_grid

# The headline case: a 5152x3864 photograph at 500px patches.
plan = plan_grid(5152, 3864, 500)
print(f"5152x3864 @ 500px -> {plan.cols} cols x {plan.rows} rows "
      f"= {len(plan.rects)} patches")
print("column offsets:", sorted({r.x for r in plan.rects}))
print("row offsets:   ", sorted({r.y for r in plan.rects}))
print("note the last offsets, 4652 and 3364: anchored to the edge, not 5000/3500")

# The smallest raw resolution: 640x480. The height is 20px short of one
# patch, so the plan records reflection padding.
plan = plan_grid(640, 480, 500)
print(f"\n640x480 @ 500px -> {len(plan.rects)} patches, "
      f"x offsets {sorted({r.x for r in plan.rects})}, "
      f"pad_bottom={plan.pad_bottom}")

# Extraction is pixel-exact. Build a gradient, cut it, and compare one
# edge patch against a direct crop at the anchored offset.
col = (np.arange(1000, dtype=np.uint32) * 255 // 999).astype(np.uint8)
pixels = np.zeros((700, 1000, 3), dtype=np.uint8)
pixels[..., 0] = col[None, :]
img = ImageBuffer(pixels)
plan = plan_grid(1000, 700, 500)
patches = extract_patches(img, plan)
last = patches[-1]
direct = pixels[200:700, 500:1000]
print(f"\n1000x700 @ 500px -> {len(patches)} patches; "
      f"last patch equals direct crop: "
      f"{np.array_equal(last.image.pixels, direct)}")

# Stable ids name every patch after its source and grid cell.
print("\nids:", ", ".join(patch_id("slide_007.jpg", p.row, p.col)
                          for p in patches))
