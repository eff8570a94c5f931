"""Small 1-D CNN for spectrum learning, written directly on numpy.

Layout: conv(2->F1, width 3) -> ReLU -> conv(F1->F2, width 3) -> ReLU ->
dense(H) -> ReLU -> dense(C) -> softmax. Convolutions are valid, stride 1.
Inputs are (batch, 2, w) arrays holding the I row and the Q row.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .waveform import Dataset, IqWindow, class_name, decode_class

log = logging.getLogger(__name__)

PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "out_w", "out_b")

MAGIC = b"ISLM"
VERSION = 1
_HEAD = struct.Struct("<4sI")
_DIMS = struct.Struct("<9I")


class ModelFormatError(ValueError):
    """Model file is truncated, corrupt or not an ISLM file."""


class ModelVersionError(ModelFormatError):
    """Model file carries a version this code cannot read."""


@dataclass
class CnnModel:
    params: dict[str, np.ndarray]
    window: int
    n_users: int

    @property
    def n_classes(self) -> int:
        return self.params["out_b"].shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        p = self.params
        f1, cin, k1 = p["conv1_w"].shape
        f2, _, k2 = p["conv2_w"].shape
        return (cin, self.window, f1, k1, f2, k2, p["fc1_b"].shape[0], self.n_classes, self.n_users)

    def copy(self) -> "CnnModel":
        return CnnModel({k: v.copy() for k, v in self.params.items()}, self.window, self.n_users)


def init_model(window: int, n_users: int = 2, conv1: int = 256, conv2: int = 128, hidden: int = 256,
               kernel: int = 3, n_classes: int | None = None, seed: int = 0, dtype=np.float32) -> CnnModel:
    """He-normal weights, zero biases."""
    n_classes = 2 ** n_users if n_classes is None else n_classes
    w2 = window - 2 * (kernel - 1)
    if w2 < 1:
        raise ValueError(f"window {window} too short for two width-{kernel} convolutions")
    rng = np.random.default_rng(seed)

    def he(shape, fan_in):
        return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)

    params = {
        "conv1_w": he((conv1, 2, kernel), 2 * kernel),
        "conv1_b": np.zeros(conv1, dtype),
        "conv2_w": he((conv2, conv1, kernel), conv1 * kernel),
        "conv2_b": np.zeros(conv2, dtype),
        "fc1_w": he((w2 * conv2, hidden), w2 * conv2),
        "fc1_b": np.zeros(hidden, dtype),
        "out_w": he((hidden, n_classes), hidden),
        "out_b": np.zeros(n_classes, dtype),
    }
    return CnnModel(params, window, n_users)


def to_input(samples) -> np.ndarray:
    """Complex windows (n, w) or (w,) -> real (n, 2, w)."""
    s = np.atleast_2d(np.asarray(samples))
    return np.stack([s.real, s.imag], axis=1)


def _conv(x, w, b):
    # x: (B, L, Cin) channels-last; w: (F, Cin, k)
    k = w.shape[2]
    cols = sliding_window_view(x, k, axis=1)  # (B, L-k+1, Cin, k)
    B, Lo = cols.shape[:2]
    cols = cols.reshape(B * Lo, -1)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(B, Lo, -1), cols


def _conv_back(dout, cols, x_shape, w, need_dx=True):
    B, Lo, F = dout.shape
    d2 = dout.reshape(B * Lo, F)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    k = w.shape[2]
    dcols = (d2 @ w.reshape(F, -1)).reshape(B, Lo, w.shape[1], k)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for t in range(k):
        dx[:, t:t + Lo, :] += dcols[..., t]
    return dx, dw, db


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(model: CnnModel, x: np.ndarray):
    p = model.params
    if x.ndim != 3 or x.shape[1] != 2 or x.shape[2] != model.window:
        raise ValueError(f"expected input of shape (batch, 2, {model.window}), got {x.shape}")
    x = np.ascontiguousarray(x.transpose(0, 2, 1), dtype=p["conv1_w"].dtype)
    z1, cols1 = _conv(x, p["conv1_w"], p["conv1_b"])
    a1 = np.maximum(z1, 0)
    z2, cols2 = _conv(a1, p["conv2_w"], p["conv2_b"])
    a2 = np.maximum(z2, 0)
    flat = a2.reshape(len(x), -1)
    z3 = flat @ p["fc1_w"] + p["fc1_b"]
    a3 = np.maximum(z3, 0)
    logits = a3 @ p["out_w"] + p["out_b"]
    cache = (x, cols1, z1, a1, cols2, z2, flat, z3, a3)
    return logits, cache


def logits(model: CnnModel, x: np.ndarray) -> np.ndarray:
    return _forward(model, x)[0]


def forward(model: CnnModel, window) -> np.ndarray:
    """Class probabilities for one window or a batch.

    Accepts an ``IqWindow``, complex samples, or a real (2, w)/(B, 2, w) array.
    """
    x = _as_batch(window)
    probs = _softmax(logits(model, x))
    return probs[0] if _is_single(window) else probs


def _is_single(window) -> bool:
    if isinstance(window, IqWindow):
        return True
    a = np.asarray(window)
    return a.ndim == 1 or (a.ndim == 2 and not np.iscomplexobj(a))


def _as_batch(window) -> np.ndarray:
    if isinstance(window, IqWindow):
        window = window.samples
    a = np.asarray(window)
    if np.iscomplexobj(a):
        return to_input(a)
    return a[None] if a.ndim == 2 else a


def loss_and_gradients(model: CnnModel, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("empty batch")
    if labels.max() >= model.n_classes or labels.min() < 0:
        raise ValueError("label outside the model's classes")
    p = model.params
    z, (xc, cols1, z1, a1, cols2, z2, flat, z3, a3) = _forward(model, x)
    B = len(labels)
    zs = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(zs).sum(axis=1))
    loss = float(np.mean(logsum - zs[np.arange(B), labels]))

    dz = np.exp(zs - logsum[:, None])
    dz[np.arange(B), labels] -= 1
    dz /= B
    g = {"out_w": a3.T @ dz, "out_b": dz.sum(axis=0)}
    da3 = dz @ p["out_w"].T
    dz3 = da3 * (z3 > 0)
    g["fc1_w"] = flat.T @ dz3
    g["fc1_b"] = dz3.sum(axis=0)
    dz2 = (dz3 @ p["fc1_w"].T).reshape(z2.shape) * (z2 > 0)
    da1, g["conv2_w"], g["conv2_b"] = _conv_back(dz2, cols2, a1.shape, p["conv2_w"])
    dz1 = da1 * (z1 > 0)
    _, g["conv1_w"], g["conv1_b"] = _conv_back(dz1, cols1, xc.shape, p["conv1_w"], need_dx=False)
    return loss, {k: g[k].astype(p[k].dtype, copy=False) for k in PARAM_ORDER}


# ------------------------------------------------------------------ Adam

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    split_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> None:
    """In-place Adam update with bias correction."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        params[k] -= (config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)).astype(params[k].dtype)


# ---------------------------------------------------------------- training

@dataclass
class TrainReport:
    per_class_accuracy: dict[int, float]
    overall_accuracy: float
    epoch_losses: list[float]
    val_accuracies: list[float]
    best_epoch: int

    def table(self, n_users: int) -> str:
        rows = [f"{'Class':<12} Accuracy"]
        for c, acc in sorted(self.per_class_accuracy.items()):
            rows.append(f"{class_name(c, n_users):<12} {100 * acc:6.2f}%")
        rows.append(f"{'Overall':<12} {100 * self.overall_accuracy:6.2f}%")
        return "\n".join(rows)


def predict(model: CnnModel, x: np.ndarray, batch: int = 512) -> np.ndarray:
    out = [np.argmax(logits(model, x[i:i + batch]), axis=1) for i in range(0, len(x), batch)]
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def per_class_accuracy(model: CnnModel, dataset: Dataset) -> tuple[dict[int, float], float]:
    if dataset.window != model.window:
        raise ValueError(f"dataset window {dataset.window} does not match model window {model.window}")
    pred = predict(model, to_input(dataset.samples))
    acc = {int(c): float(np.mean(pred[dataset.labels == c] == c)) for c in np.unique(dataset.labels)}
    return acc, float(np.mean(pred == dataset.labels))


def train(dataset: Dataset, config: TrainConfig = TrainConfig(), model: CnnModel | None = None,
          **model_kwargs) -> tuple[CnnModel, TrainReport]:
    """Adam on mean cross-entropy; keeps the weights with the best validation accuracy.

    With an empty validation split the final weights are returned.
    """
    train_idx, val_idx, test_idx = dataset.split_indices(config.split_seed)
    present = set(np.unique(dataset.labels[train_idx]).tolist())
    missing = set(range(dataset.n_classes)) - present
    if missing:
        raise ValueError(f"training split lacks classes {sorted(missing)}")
    if model is None:
        model = init_model(dataset.window, dataset.n_users, seed=config.seed, **model_kwargs)
    dtype = model.params["conv1_w"].dtype
    x_all = to_input(dataset.samples).astype(dtype)
    y_all = dataset.labels.astype(np.int64)
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    best, best_acc, best_epoch = model.copy(), -1.0, 0
    losses, val_accs = [], []
    for epoch in range(config.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        total = 0.0
        for i in range(0, len(order), config.batch_size):
            b = order[i:i + config.batch_size]
            loss, grads = loss_and_gradients(model, x_all[b], y_all[b])
            adam_step(model.params, grads, state, config)
            total += loss * len(b)
        losses.append(total / len(order))
        val_acc = float(np.mean(predict(model, x_all[val_idx]) == y_all[val_idx])) if len(val_idx) else 0.0
        val_accs.append(val_acc)
        # without validation data the latest weights are the selection
        if val_acc > best_acc or not len(val_idx):
            best, best_acc, best_epoch = model.copy(), val_acc, epoch
        log.info("epoch %d loss %.4f val_acc %.4f", epoch, losses[-1], val_acc)
    acc, overall = per_class_accuracy(best, dataset.subset(test_idx))
    return best, TrainReport(acc, overall, losses, val_accs, best_epoch)


def infer_interferers(model: CnnModel, window, desired: int = 0) -> tuple[frozenset[int], int]:
    """Decode the arg-max class into the inferred interferer set and its size."""
    probs = forward(model, window)
    flags = decode_class(int(np.argmax(probs)), model.n_users)
    inferred = frozenset(m for m, a in enumerate(flags) if a and m != desired)
    return inferred, len(inferred)


# ------------------------------------------------------------------ I/O

def save_model(model: CnnModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION))
        fh.write(_DIMS.pack(*model.dims))
        for k in PARAM_ORDER:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f4").tobytes())


def load_model(path: str | Path) -> CnnModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise ModelFormatError("file too short for an ISLM header")
    magic, version = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ModelVersionError(f"unsupported model version {version}")
    if len(raw) < _HEAD.size + _DIMS.size:
        raise ModelFormatError("truncated layer dimensions")
    cin, w, f1, k1, f2, k2, hidden, n_classes, n_users = _DIMS.unpack_from(raw, _HEAD.size)
    w2 = w - (k1 - 1) - (k2 - 1)
    shapes = {
        "conv1_w": (f1, cin, k1), "conv1_b": (f1,),
        "conv2_w": (f2, f1, k2), "conv2_b": (f2,),
        "fc1_w": (w2 * f2, hidden), "fc1_b": (hidden,),
        "out_w": (hidden, n_classes), "out_b": (n_classes,),
    }
    offset = _HEAD.size + _DIMS.size
    need = offset + 4 * sum(math.prod(s) for s in shapes.values())
    if w2 < 1 or len(raw) != need:
        raise ModelFormatError(f"expected {need} bytes, found {len(raw)}")
    params = {}
    for k in PARAM_ORDER:
        n = math.prod(shapes[k])
        params[k] = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shapes[k]).astype(np.float32)
        offset += 4 * n
    return CnnModel(params, w, n_users)
