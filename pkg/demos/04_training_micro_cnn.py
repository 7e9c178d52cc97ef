#!/usr/bin/env python3
"""Training walkthrough: synthetic corpus -> patches -> reference CNN.

Runs a deliberately short scratch training (4 epochs, small corpus) so
the demo finishes in about a minute; the acceptance suite runs the
full smoke. Also shows the gradient check that guards the backward
pass and a transfer-mode run reusing the scratch trunk.
"""

import tempfile
import time
from pathlib import Path

import numpy as np

from fungiforge.dataset import build_manifest, holdout_split
from fungiforge.filtering import FilterThresholds, filter_run
from fungiforge.harness import DirectoryPatchStore, RunConfig, evaluate, train
from fungiforge.imaging import load_image, save_png
from fungiforge.nn import MicroCNN, MicroCnnArch, onehot, save_model_npz
from fungiforge.patching import extract_patches, patch_id, plan_grid
from fungiforge.synthetic import generate_corpus

work = Path(tempfile.mkdtemp(prefix="fungiforge_demo_"))
raw, patches = work / "raw", work / "patches"
print(f"working in {work}")

labels = generate_corpus(raw, per_class=6, seed=7)
patches.mkdir()
for name in sorted(labels):
    img = load_image(raw / name)
    for p in extract_patches(img, plan_grid(img.width, img.height, 100)):
        save_png(p.image, patches / f"{patch_id(name, p.row, p.col)}.png")
manifest = build_manifest(patches, labels)
report = filter_run(manifest, FilterThresholds(), patches)
print("filter counts:", {k: v for k, v in report.counts.items() if v})

split = holdout_split(manifest, (76.5, 13.5, 10.0), seed=1)
sets = {name: list(ids) for name, ids in split.sets.items()}

# First, the gradient check that keeps the backward pass honest: a
# small double-precision instance against central finite differences.
small = MicroCNN(MicroCnnArch(input_size=8, conv_channels=(2, 3, 4),
                              hidden=10, classes=5), dtype=np.float64)
small.init_params(np.random.default_rng(0))
x = np.random.default_rng(1).random((3, 8, 8, 3))
y = onehot(np.array([0, 2, 4]), 5)
_, cache = small.forward(x)
analytic = small.backward(cache, y)
h, worst = 1e-5, 0.0
for name, p in small.params.items():
    flat, gflat = p.ravel(), analytic[name].ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        hi = small.loss_on(x, y)
        flat[idx] = orig - h
        lo = small.loss_on(x, y)
        flat[idx] = orig
        num = (hi - lo) / (2 * h)
        worst = max(worst, abs(num - gflat[idx])
                    / max(abs(num), abs(gflat[idx]), 1e-6))
print(f"gradient check vs central differences: max relative error {worst:.2e}")

# Scratch training at the benchmark hyperparameters (lr 1e-5, 80
# steps/epoch), shortened to 4 epochs for the demo.
config = RunConfig.holdout_defaults(mode="scratch", seed=11)
config.epochs = 4
store = DirectoryPatchStore(patches, manifest, config.input_size)
t0 = time.time()
model, record = train(config, sets, store)
print(f"\nscratch run: {len(record.epochs)} epochs in {time.time()-t0:.0f}s")
for i, e in enumerate(record.epochs, 1):
    print(f"  epoch {i}: train {e.train_loss:.3f}/{e.train_acc:.2f} "
          f"val {e.val_loss:.3f}/{e.val_acc:.2f}")
result = evaluate(model, sets["test"], store, config.test_batch)
print(f"test: loss {result.loss:.3f}, accuracy {result.accuracy*100:.0f}%")

# Transfer mode: freeze the scratch trunk, train only the dense head.
ckpt = work / "trunk.npz"
save_model_npz(ckpt, model)
transfer = RunConfig.holdout_defaults(mode="transfer", seed=12)
transfer.epochs = 2
transfer.trunk_weights = str(ckpt)
model2, record2 = train(transfer, sets, store)
frozen = all(np.array_equal(model2.params[k], model.params[k].astype(np.float32))
             for k in ("conv1_w", "conv2_w", "conv3_w"))
print(f"\ntransfer run: {len(record2.epochs)} epochs, trunk frozen: {frozen}")
