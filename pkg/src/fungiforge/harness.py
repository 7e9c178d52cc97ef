"""Training and evaluation under the benchmark protocol.

An epoch is exactly steps_per_epoch train batches (the shuffled train
set is cycled as needed) followed by validation_steps validation
batches. Early stopping monitors validation loss with strict
improvement and a patience of 8 epochs. Validation and test batches
are assembled by a path that has no augmentation call at all.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AugmentPolicy, augment_array
from .dataset import CLASS_INDEX, Manifest
from .errors import BackendFailed, DataUnavailable, MalformedResults
from .imaging import load_image, resize_to_unit
from .nn import MicroCNN, MicroCnnArch, batch_cross_entropy, onehot
from .optim import adam_step, init_adam
from .rng import PortableRng, derive_key


@dataclass
class RunConfig:
    mode: str = "transfer"  # transfer | scratch
    epochs: int = 100
    steps_per_epoch: int = 80
    train_batch: int = 24
    validation_batch: int = 56
    validation_steps: int = 6
    test_batch: int = 45
    learning_rate: float = 1e-5
    early_stop_patience: int = 8
    seed: int = 0
    input_size: int = 64
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    trunk_weights: str | None = None  # transfer mode: checkpoint to load and freeze

    def __post_init__(self):
        if self.mode not in ("transfer", "scratch"):
            raise ValueError(f"mode must be transfer or scratch, got {self.mode!r}")
        for name in ("epochs", "steps_per_epoch", "train_batch", "validation_batch",
                     "validation_steps", "test_batch", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")

    @classmethod
    def kfold_defaults(cls, mode: str = "transfer", seed: int = 0) -> "RunConfig":
        return cls(mode=mode, epochs=100 if mode == "transfer" else 200,
                   train_batch=24, validation_batch=56, validation_steps=6,
                   seed=seed)

    @classmethod
    def holdout_defaults(cls, mode: str = "transfer", seed: int = 0) -> "RunConfig":
        return cls(mode=mode, epochs=100 if mode == "transfer" else 200,
                   train_batch=26, validation_batch=70, validation_steps=5,
                   seed=seed)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "mode", "epochs", "steps_per_epoch", "train_batch", "validation_batch",
            "validation_steps", "test_batch", "learning_rate",
            "early_stop_patience", "seed", "input_size", "trunk_weights")}
        d["augment"] = self.augment.to_dict()
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        aug = AugmentPolicy.from_dict(d.pop("augment", {}))
        return cls(augment=aug, **d)


@dataclass(frozen=True)
class EvalResult:
    loss: float
    accuracy: float  # fraction in [0, 1]


@dataclass
class EpochStats:
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainRecord:
    epochs: list[EpochStats] = field(default_factory=list)
    stop_epoch: int = 0
    stop_reason: str = "completed"  # completed | early_stop
    train_samples: int = 0

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        for i, e in enumerate(self.epochs, start=1):
            lines.append(f"{i},{e.train_loss:.6f},{e.train_acc:.6f},"
                         f"{e.val_loss:.6f},{e.val_acc:.6f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "TrainRecord":
        rec = cls()
        lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
        for line in lines[1:]:
            _, tl, ta, vl, va = line.split(",")
            rec.epochs.append(EpochStats(float(tl), float(ta), float(vl), float(va)))
        rec.stop_epoch = len(rec.epochs)
        return rec


def early_stop(validation_loss_history, patience: int = 8) -> bool:
    """True iff the last `patience` entries all failed to improve.

    Improvement is strict (tolerance 0); any new best resets the
    counter.
    """
    best = math.inf
    since_best = 0
    for value in validation_loss_history:
        if value < best:
            best = value
            since_best = 0
        else:
            since_best += 1
    return since_best >= patience


class ArrayPatchStore:
    """In-memory store: patch_id -> unit-range float array, plus labels."""

    def __init__(self, arrays: dict[str, np.ndarray], labels: dict[str, str]):
        self._arrays = arrays
        self._labels = labels

    def load(self, patch_id: str) -> np.ndarray:
        try:
            return self._arrays[patch_id]
        except KeyError as exc:
            raise DataUnavailable(f"no data for patch {patch_id}") from exc

    def label_index(self, patch_id: str) -> int:
        return CLASS_INDEX[self._labels[patch_id]]


class DirectoryPatchStore:
    """Loads patch PNGs on demand, resized to the model input size.

    Decoded arrays are cached; the corpus at desk scale fits in memory
    comfortably.
    """

    def __init__(self, patch_dir, manifest: Manifest, input_size: int = 64):
        self.patch_dir = Path(patch_dir)
        self.manifest = manifest
        self.input_size = input_size
        self._cache: dict[str, np.ndarray] = {}

    def load(self, patch_id: str) -> np.ndarray:
        cached = self._cache.get(patch_id)
        if cached is None:
            path = self.patch_dir / f"{patch_id}.png"
            if not path.is_file():
                raise DataUnavailable(f"missing patch file {path}")
            cached = resize_to_unit(load_image(path), self.input_size)
            self._cache[patch_id] = cached
        return cached

    def label_index(self, patch_id: str) -> int:
        return CLASS_INDEX[self.manifest.class_of(patch_id)]


class _CyclingSampler:
    """Yields train ids in seeded shuffled order, reshuffling per cycle."""

    def __init__(self, ids, seed: int):
        self._ids = sorted(ids)
        self._seed = seed
        self._cycle = -1
        self._order: list[str] = []
        self._pos = 0

    def _next_cycle(self):
        self._cycle += 1
        rng = PortableRng.from_seed(self._seed, "train-order", self._cycle)
        self._order = rng.shuffled(self._ids)
        self._pos = 0

    def next_batch(self, n: int) -> list[str]:
        batch = []
        while len(batch) < n:
            if self._pos >= len(self._order):
                self._next_cycle()
            batch.append(self._order[self._pos])
            self._pos += 1
        return batch


def assemble_train_batch(store, ids, policy: AugmentPolicy, stream: PortableRng,
                         classes: int = 5):
    xs = [augment_array(store.load(pid), policy, stream) for pid in ids]
    ys = np.array([store.label_index(pid) for pid in ids])
    return np.stack(xs), onehot(ys, classes)


def assemble_eval_batch(store, ids, classes: int = 5):
    # Evaluation path: loads only, no augmentation of any kind.
    xs = [store.load(pid) for pid in ids]
    ys = np.array([store.label_index(pid) for pid in ids])
    return np.stack(xs), onehot(ys, classes)


def _accuracy(probs: np.ndarray, targets: np.ndarray) -> float:
    return float((probs.argmax(axis=1) == targets.argmax(axis=1)).mean())


def build_model(config: RunConfig, dtype=np.float32) -> MicroCNN:
    """Fresh seeded model for the config; transfer mode freezes the trunk."""
    arch = MicroCnnArch(
        input_size=config.input_size,
        dropout=0.5 if config.mode == "scratch" else 0.0,
    )
    model = MicroCNN(arch, dtype=dtype)
    model.init_params(np.random.default_rng(derive_key(config.seed, "init")))
    if config.mode == "transfer" and config.trunk_weights:
        from .nn import load_trunk_weights

        load_trunk_weights(model, config.trunk_weights)
    return model


def train(config: RunConfig, split_sets: dict, store,
          model: MicroCNN | None = None) -> tuple[MicroCNN, TrainRecord]:
    """Run the training protocol; fully reproducible given the seed."""
    train_ids = list(split_sets["train"])
    val_ids = sorted(split_sets["validation"])
    if not train_ids or not val_ids:
        raise DataUnavailable("train and validation sets must be non-empty")

    if model is None:
        model = build_model(config)
    head_only = config.mode == "transfer"
    trainable = model.trainable_names(head_only=head_only)
    state = init_adam(model.params, trainable)

    sampler = _CyclingSampler(train_ids, config.seed)
    record = TrainRecord()
    val_losses: list[float] = []

    for epoch in range(config.epochs):
        loss_sum = acc_sum = 0.0
        for step in range(config.steps_per_epoch):
            ids = sampler.next_batch(config.train_batch)
            stream = PortableRng.from_seed(config.seed, "augment", epoch, step)
            x, y = assemble_train_batch(store, ids, config.augment, stream,
                                        model.arch.classes)
            drng = np.random.default_rng(derive_key(config.seed, "dropout", epoch, step))
            probs, cache = model.forward(x, train=True, dropout_rng=drng)
            loss_sum += batch_cross_entropy(probs, y)
            acc_sum += _accuracy(probs, y)
            grads = model.backward(cache, y)
            adam_step(model.params, {k: grads[k] for k in trainable}, state,
                      config.learning_rate)
            record.train_samples += len(ids)

        val_loss, val_acc = _validation_pass(model, val_ids, store, config)
        record.epochs.append(EpochStats(
            train_loss=loss_sum / config.steps_per_epoch,
            train_acc=acc_sum / config.steps_per_epoch,
            val_loss=val_loss,
            val_acc=val_acc,
        ))
        val_losses.append(val_loss)
        if early_stop(val_losses, config.early_stop_patience):
            record.stop_epoch = epoch + 1
            record.stop_reason = "early_stop"
            return model, record

    record.stop_epoch = len(record.epochs)
    record.stop_reason = "completed"
    return model, record


def _validation_pass(model, val_ids, store, config) -> tuple[float, float]:
    loss_sum = acc_sum = 0.0
    pos = 0
    for _ in range(config.validation_steps):
        ids = [val_ids[(pos + i) % len(val_ids)] for i in range(config.validation_batch)]
        pos += config.validation_batch
        x, y = assemble_eval_batch(store, ids, model.arch.classes)
        probs, _ = model.forward(x, train=False)
        loss_sum += batch_cross_entropy(probs, y)
        acc_sum += _accuracy(probs, y)
    return loss_sum / config.validation_steps, acc_sum / config.validation_steps


def evaluate(model: MicroCNN, ids, store, batch_size: int) -> EvalResult:
    """Mean loss and top-1 accuracy over the set, each sample once."""
    ids = sorted(ids)
    if not ids:
        raise DataUnavailable("cannot evaluate an empty set")
    total_loss = 0.0
    correct = 0
    for start in range(0, len(ids), batch_size):
        chunk = ids[start : start + batch_size]
        x, y = assemble_eval_batch(store, chunk, model.arch.classes)
        probs, _ = model.forward(x, train=False)
        total_loss += batch_cross_entropy(probs, y) * len(chunk)
        correct += int((probs.argmax(axis=1) == y.argmax(axis=1)).sum())
    return EvalResult(loss=total_loss / len(ids), accuracy=correct / len(ids))


def eval_batch_count(set_size: int, batch_size: int) -> int:
    return math.ceil(set_size / batch_size)


def run_kfold_native(config: RunConfig, fold_sets: list[dict], store):
    """Train and test one model per fold; returns (fold, EvalResult, record)."""
    results = []
    for i, sets in enumerate(fold_sets):
        fold_config = replace(config, seed=derive_key(config.seed, "fold", i))
        model, record = train(fold_config, sets, store)
        result = evaluate(model, sets["test"], store, config.test_batch)
        results.append((i + 1, result, record))
    return results


RESULTS_HEADER = "fold,loss,accuracy"


def write_results_csv(path, results) -> None:
    """`results` is an iterable of (fold 1..k, EvalResult)."""
    lines = [RESULTS_HEADER]
    for fold, res in results:
        lines.append(f"{fold},{res.loss:.6f},{res.accuracy:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_results_csv(path, k: int) -> list[tuple[int, EvalResult]]:
    """Parse and validate a fold results file (accuracy as a fraction)."""
    path = Path(path)
    if not path.is_file():
        raise MalformedResults(f"results file missing: {path}")
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0].strip() != RESULTS_HEADER:
        raise MalformedResults(f"results header must be '{RESULTS_HEADER}'")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 3:
            raise MalformedResults(f"bad results row: {line!r}")
        try:
            fold, loss, acc = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise MalformedResults(f"bad results row: {line!r}") from exc
        if not math.isfinite(loss) or loss < 0:
            raise MalformedResults(f"loss out of range in row: {line!r}")
        if not 0.0 <= acc <= 1.0:
            raise MalformedResults(f"accuracy out of [0, 1] in row: {line!r}")
        rows.append((fold, EvalResult(loss=loss, accuracy=acc)))
    if sorted(f for f, _ in rows) != list(range(1, k + 1)):
        raise MalformedResults(
            f"expected folds 1..{k} exactly once, got {[f for f, _ in rows]}"
        )
    return sorted(rows, key=lambda r: r[0])


def external_backend_run(
    config: RunConfig,
    fold_sets: list[dict],
    manifest: Manifest,
    backend_cmd: str,
    job_dir,
) -> list[tuple[int, EvalResult]]:
    """Delegate fold training to an external command via a job directory.

    Layout written: job/config (JSON, includes k), job/fold_<i>/
    {train,validation,test}.csv with patch_id,source_image,class rows.
    The command is invoked with the job directory as its last argument
    and must leave job/results.csv ('fold,loss,accuracy', folds 1..k,
    accuracy as a fraction).
    """
    job_dir = Path(job_dir)
    job_dir.mkdir(parents=True, exist_ok=True)
    k = len(fold_sets)
    payload = config.to_dict()
    payload["k"] = k
    (job_dir / "config").write_text(json.dumps(payload, indent=2) + "\n",
                                    encoding="utf-8")
    for i, sets in enumerate(fold_sets):
        fold_dir = job_dir / f"fold_{i}"
        fold_dir.mkdir(exist_ok=True)
        for name in ("train", "validation", "test"):
            lines = ["patch_id,source_image,class"]
            for pid in sorted(sets[name]):
                row = manifest.get(pid)
                lines.append(f"{pid},{row.source_image},{row.class_name}")
            (fold_dir / f"{name}.csv").write_text("\n".join(lines) + "\n",
                                                  encoding="utf-8")

    argv = shlex.split(backend_cmd) + [str(job_dir)]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise BackendFailed(f"cannot run backend {backend_cmd!r}: {exc}") from exc
    if proc.returncode != 0:
        raise BackendFailed(
            f"backend exited with {proc.returncode}: {proc.stderr.strip()[:500]}"
        )
    return read_results_csv(job_dir / "results.csv", k)
