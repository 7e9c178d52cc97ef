"""Small reference CNN with exact analytic gradients, in plain numpy.

Trunk: three 3x3 same-padding conv+ReLU blocks, each followed by 2x2
max pooling. Head: dense 512 + ReLU, optional inverted dropout, dense
to 5 logits, softmax. Parameters live in a flat dict so the optimizer
and checkpoints stay trivial. Double precision is used for gradient
verification, single precision for training runs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeMismatch

LOSS_CLAMP = 1e-12  # cross-entropy probability floor

TRUNK_PARAMS = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b")
HEAD_PARAMS = ("fc1_w", "fc1_b", "fc2_w", "fc2_b")


@dataclass(frozen=True)
class MicroCnnArch:
    input_size: int = 64
    conv_channels: tuple[int, int, int] = (16, 32, 64)
    hidden: int = 512
    classes: int = 5
    dropout: float = 0.0  # 0.5 in scratch mode, off in transfer mode

    def __post_init__(self):
        if self.input_size % 8 != 0 or self.input_size < 8:
            raise ValueError("input_size must be a positive multiple of 8")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def flat_features(self) -> int:
        side = self.input_size // 8
        return side * side * self.conv_channels[2]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax over the last axis; rows sum to 1."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    """-log p_target for one sample, with p clamped to [1e-12, 1]."""
    p = float(np.clip((probs * onehot).sum(), LOSS_CLAMP, 1.0))
    return -np.log(p)


def batch_cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Mean clamped cross-entropy over a batch."""
    p = np.clip((probs * onehot).sum(axis=-1), LOSS_CLAMP, 1.0)
    return float(-np.log(p).mean())


def onehot(labels: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _conv3x3_cols(x: np.ndarray) -> np.ndarray:
    # (n, h, w, cin) -> (n, h, w, 3, 3, cin) window stack, reflect-free zero pad
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, h, w, 3, 3, c), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            cols[:, :, :, ki, kj, :] = xp[:, ki : ki + h, kj : kj + w, :]
    return cols


def _conv3x3_forward(x, w, b):
    n, h, wd, cin = x.shape
    cout = w.shape[-1]
    cols = _conv3x3_cols(x)
    out = cols.reshape(n * h * wd, 9 * cin) @ w.reshape(9 * cin, cout) + b
    return out.reshape(n, h, wd, cout), cols


def _conv3x3_backward(cols, w, dout, need_dx=True):
    n, h, wd = dout.shape[:3]
    cin = cols.shape[-1]
    cout = w.shape[-1]
    dflat = dout.reshape(n * h * wd, cout)
    dw = (cols.reshape(n * h * wd, 9 * cin).T @ dflat).reshape(w.shape)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dflat @ w.reshape(9 * cin, cout).T).reshape(n, h, wd, 3, 3, cin)
    dxp = np.zeros((n, h + 2, wd + 2, cin), dtype=dout.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki : ki + h, kj : kj + wd, :] += dcols[:, :, :, ki, kj, :]
    return dxp[:, 1 : h + 1, 1 : wd + 1, :], dw, db


def _pool2_quads(x):
    return (x[:, 0::2, 0::2], x[:, 0::2, 1::2],
            x[:, 1::2, 0::2], x[:, 1::2, 1::2])


def _pool2_forward(x):
    q = _pool2_quads(x)
    return np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))


def _pool2_backward(dout, pooled, x, in_shape):
    # Route each window's gradient to the first position (row-major
    # scan order) that equals the maximum, matching argmax semantics.
    dx = np.zeros(in_shape, dtype=dout.dtype)
    quads = _pool2_quads(x)
    slots = ((slice(None), slice(0, None, 2), slice(0, None, 2)),
             (slice(None), slice(0, None, 2), slice(1, None, 2)),
             (slice(None), slice(1, None, 2), slice(0, None, 2)),
             (slice(None), slice(1, None, 2), slice(1, None, 2)))
    taken = np.zeros(pooled.shape, dtype=bool)
    for quad, slot in zip(quads, slots):
        hit = (quad == pooled) & ~taken
        dx[slot] = dout * hit
        taken |= hit
    return dx


@dataclass
class ForwardCache:
    conv_cols: list
    relu_masks: list
    pool_inputs: list
    pool_outputs: list
    fc1_in: np.ndarray
    fc1_relu_mask: np.ndarray
    dropout_mask: np.ndarray | None
    hidden: np.ndarray
    probs: np.ndarray


class MicroCNN:
    """Parameter container plus forward/backward passes."""

    def __init__(self, arch: MicroCnnArch = MicroCnnArch(), dtype=np.float32):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}

    def init_params(self, rng: np.random.Generator) -> None:
        """Fan-in-scaled uniform weights (limit 1/sqrt(fan_in)), zero biases."""
        a = self.arch
        cin = 3
        for i, cout in enumerate(a.conv_channels, start=1):
            self.params[f"conv{i}_w"] = self._uniform(rng, (3, 3, cin, cout), 9 * cin)
            self.params[f"conv{i}_b"] = np.zeros(cout, dtype=self.dtype)
            cin = cout
        self.params["fc1_w"] = self._uniform(rng, (a.flat_features, a.hidden),
                                             a.flat_features)
        self.params["fc1_b"] = np.zeros(a.hidden, dtype=self.dtype)
        self.params["fc2_w"] = self._uniform(rng, (a.hidden, a.classes), a.hidden)
        self.params["fc2_b"] = np.zeros(a.classes, dtype=self.dtype)

    def _uniform(self, rng, shape, fan_in):
        limit = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-limit, limit, size=shape).astype(self.dtype)

    def trainable_names(self, head_only: bool = False) -> tuple[str, ...]:
        return HEAD_PARAMS if head_only else TRUNK_PARAMS + HEAD_PARAMS

    def forward(
        self,
        x: np.ndarray,
        train: bool = False,
        dropout_rng: np.random.Generator | None = None,
        dropout_mask: np.ndarray | None = None,
    ) -> tuple[np.ndarray, ForwardCache]:
        """Probabilities per sample plus the cache for backward.

        Dropout (inverted convention: kept units scaled by 1/(1-p)) is
        active only when train=True and the arch has a nonzero rate; in
        evaluation mode the pass is deterministic.
        """
        a = self.arch
        if x.ndim != 4 or x.shape[1:] != (a.input_size, a.input_size, 3):
            raise ShapeMismatch(
                f"expected (n, {a.input_size}, {a.input_size}, 3), got {x.shape}"
            )
        x = np.ascontiguousarray(x, dtype=self.dtype)

        conv_cols, relu_masks, pool_inputs, pool_outputs = [], [], [], []
        h = x
        for i in range(1, 4):
            h, cols = _conv3x3_forward(h, self.params[f"conv{i}_w"],
                                       self.params[f"conv{i}_b"])
            conv_cols.append(cols)
            mask = h > 0
            relu_masks.append(mask)
            h = h * mask
            pool_inputs.append(h)
            h = _pool2_forward(h)
            pool_outputs.append(h)

        flat = h.reshape(h.shape[0], -1)
        z1 = flat @ self.params["fc1_w"] + self.params["fc1_b"]
        fc1_mask = z1 > 0
        hidden = z1 * fc1_mask

        dmask = None
        if train and a.dropout > 0.0:
            if dropout_mask is not None:
                dmask = np.asarray(dropout_mask, dtype=self.dtype)
            else:
                if dropout_rng is None:
                    raise ValueError("training with dropout needs dropout_rng")
                keep = dropout_rng.random(hidden.shape) >= a.dropout
                dmask = keep.astype(self.dtype) / self.dtype.type(1.0 - a.dropout)
            hidden = hidden * dmask

        logits = hidden @ self.params["fc2_w"] + self.params["fc2_b"]
        probs = softmax(logits)
        cache = ForwardCache(
            conv_cols=conv_cols, relu_masks=relu_masks, pool_inputs=pool_inputs,
            pool_outputs=pool_outputs, fc1_in=flat,
            fc1_relu_mask=fc1_mask, dropout_mask=dmask, hidden=hidden, probs=probs,
        )
        return probs, cache

    def backward(self, cache: ForwardCache, targets: np.ndarray) -> dict[str, np.ndarray]:
        """Exact gradients of mean cross-entropy w.r.t. every parameter."""
        probs = cache.probs
        if targets.shape != probs.shape:
            raise ShapeMismatch(f"targets {targets.shape} vs probs {probs.shape}")
        n = probs.shape[0]
        grads: dict[str, np.ndarray] = {}

        dlogits = (probs - targets.astype(probs.dtype)) / probs.dtype.type(n)
        grads["fc2_w"] = cache.hidden.T @ dlogits
        grads["fc2_b"] = dlogits.sum(axis=0)
        dhidden = dlogits @ self.params["fc2_w"].T
        if cache.dropout_mask is not None:
            dhidden = dhidden * cache.dropout_mask
        dz1 = dhidden * cache.fc1_relu_mask
        grads["fc1_w"] = cache.fc1_in.T @ dz1
        grads["fc1_b"] = dz1.sum(axis=0)
        dflat = dz1 @ self.params["fc1_w"].T

        side = self.arch.input_size // 8
        dh = dflat.reshape(n, side, side, self.arch.conv_channels[2])
        for i in range(3, 0, -1):
            pool_in = cache.pool_inputs[i - 1]
            dh = _pool2_backward(dh, cache.pool_outputs[i - 1], pool_in,
                                 pool_in.shape)
            dh = dh * cache.relu_masks[i - 1]
            dh, dw, db = _conv3x3_backward(cache.conv_cols[i - 1],
                                           self.params[f"conv{i}_w"], dh,
                                           need_dx=i > 1)
            grads[f"conv{i}_w"] = dw
            grads[f"conv{i}_b"] = db
        return grads

    def loss_on(self, x, targets, train=False, dropout_mask=None) -> float:
        probs, _ = self.forward(x, train=train, dropout_mask=dropout_mask)
        return batch_cross_entropy(probs, targets)

    def copy(self, dtype=None) -> "MicroCNN":
        clone = MicroCNN(self.arch, dtype or self.dtype)
        clone.params = {k: v.astype(clone.dtype).copy() for k, v in self.params.items()}
        return clone

    def with_dropout(self, rate: float) -> "MicroCNN":
        clone = MicroCNN(replace(self.arch, dropout=rate), self.dtype)
        clone.params = self.params
        return clone


def save_model_npz(path, model: MicroCNN) -> None:
    meta = dict(
        input_size=model.arch.input_size,
        conv_channels=np.array(model.arch.conv_channels),
        hidden=model.arch.hidden,
        classes=model.arch.classes,
        dropout=model.arch.dropout,
    )
    np.savez(path, **{f"param/{k}": v for k, v in model.params.items()}, **meta)


def load_model_npz(path, dtype=np.float32) -> MicroCNN:
    data = np.load(path)
    arch = MicroCnnArch(
        input_size=int(data["input_size"]),
        conv_channels=tuple(int(c) for c in data["conv_channels"]),
        hidden=int(data["hidden"]),
        classes=int(data["classes"]),
        dropout=float(data["dropout"]),
    )
    model = MicroCNN(arch, dtype)
    model.params = {
        k.split("/", 1)[1]: data[k].astype(dtype)
        for k in data.files if k.startswith("param/")
    }
    return model


def load_trunk_weights(model: MicroCNN, path) -> None:
    """Copy conv-block parameters from a checkpoint into `model`."""
    source = load_model_npz(path, dtype=model.dtype)
    for name in TRUNK_PARAMS:
        if source.params[name].shape != model.params[name].shape:
            raise ShapeMismatch(f"trunk weight {name} has shape "
                                f"{source.params[name].shape}, expected "
                                f"{model.params[name].shape}")
        model.params[name] = source.params[name].copy()
