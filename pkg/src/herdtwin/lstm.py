"""Stacked LSTM regression of hourly state minutes from hour of day.

Everything runs in float64 on time-major arrays ``(T, B, D)``.  Each layer
stores its gate weights as ``W`` (input to gates, ``(D, 4H)``), ``U``
(hidden to gates, ``(H, 4H)``) and ``b`` (``(4H,)``) with the gate blocks in
input, forget, candidate, output order.  A linear head maps the top hidden
state to one scaled output per step.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .core import HOURS_PER_DAY, HourlySeries
from .errors import InvalidConfig, NonFiniteLoss, SeriesHasGaps, SeriesTooShort, ShapeMismatch, UntrainedModel

CHECKPOINT_VERSION = 1
HOUR_SCALE = 23.0
MINUTE_SCALE = 60.0
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class LstmConfig:
    hidden_units: int = 128
    num_layers: int = 2
    batch_size: int = 24
    epochs: int = 2000
    learning_rate: float = 1e-3
    seed: int = 0
    sequence_length: int = 24
    stride: Optional[int] = None  # None: non-overlapping windows
    cyclic_encoding: bool = False

    def __post_init__(self):
        for name in ("hidden_units", "num_layers", "batch_size", "epochs", "sequence_length"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {v!r}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise InvalidConfig(f"learning_rate must be positive, got {self.learning_rate!r}")
        if self.stride is not None and (not isinstance(self.stride, (int, np.integer)) or self.stride < 1):
            raise InvalidConfig(f"stride must be a positive integer, got {self.stride!r}")

    @property
    def input_width(self) -> int:
        return 2 if self.cyclic_encoding else 1

    @property
    def window_stride(self) -> int:
        return self.stride if self.stride is not None else self.sequence_length

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d) -> "LstmConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------- data

def encode_hours(hours, cyclic: bool = False) -> np.ndarray:
    """Per-step input features, shape ``(..., D)``."""
    hours = np.asarray(hours, dtype=np.float64)
    if cyclic:
        ang = 2.0 * np.pi * hours / HOURS_PER_DAY
        return np.stack([np.sin(ang), np.cos(ang)], axis=-1)
    return (hours / HOUR_SCALE)[..., None]


def scale_minutes(minutes):
    return np.asarray(minutes, dtype=np.float64) / MINUTE_SCALE


def unscale(values):
    return np.asarray(values, dtype=np.float64) * MINUTE_SCALE


@dataclass(frozen=True, eq=False)
class SequenceSet:
    """Windows in sample-major layout: ``inputs (n, T, D)``, ``targets (n, T)``."""

    inputs: np.ndarray
    targets: np.ndarray
    start_serials: np.ndarray

    def __len__(self):
        return int(self.targets.shape[0])

    def time_major(self, idx=None):
        X = self.inputs if idx is None else self.inputs[idx]
        Y = self.targets if idx is None else self.targets[idx]
        return np.ascontiguousarray(X.transpose(1, 0, 2)), np.ascontiguousarray(Y.T)


def window_starts(series: HourlySeries, config: LstmConfig) -> np.ndarray:
    """Positions of each window's first hour; the first window starts at midnight."""
    hod = series.hour_of_day
    L, stride = config.sequence_length, config.window_stride
    first = int(np.argmax(hod == 0)) if np.any(hod == 0) else 0
    return np.arange(first, len(series) - L + 1, stride)


def all_windows(series: HourlySeries, config: LstmConfig) -> SequenceSet:
    """Every window of the series, unsplit (used for fine-tuning)."""
    if not series.is_gap_free:
        raise SeriesHasGaps("windowing needs a gap-free hourly grid")
    starts = window_starts(series, config)
    if starts.size == 0:
        raise SeriesTooShort(f"{len(series)} hours hold no full window")
    idx = starts[:, None] + np.arange(config.sequence_length)
    return SequenceSet(encode_hours(series.hour_of_day[idx], config.cyclic_encoding),
                       scale_minutes(series.minutes[idx]), series.serials[starts].copy())


def make_dataset(series: HourlySeries, config: LstmConfig = LstmConfig(), split: float = 0.9):
    """Chronological windows split into (train, test) at ``floor(split * n)``."""
    if not (0.0 < split < 1.0):
        raise InvalidConfig(f"split must lie in (0, 1), got {split!r}")
    if not series.is_gap_free:
        raise SeriesHasGaps("windowing needs a gap-free hourly grid")
    starts = window_starts(series, config)
    n = starts.size
    n_train = int(math.floor(split * n))
    if n_train < 1 or n - n_train < 1:
        raise SeriesTooShort(f"{len(series)} hours give {n} windows; need at least one train and one test window")
    L = config.sequence_length
    idx = starts[:, None] + np.arange(L)
    X = encode_hours(series.hour_of_day[idx], config.cyclic_encoding)
    Y = scale_minutes(series.minutes[idx])
    serials = series.serials[starts]

    def part(sl):
        return SequenceSet(X[sl].copy(), Y[sl].copy(), serials[sl].copy())

    return part(slice(0, n_train)), part(slice(n_train, n))


# ---------------------------------------------------------------- model

@dataclass
class LstmLayer:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray


@dataclass
class LstmModel:
    config: LstmConfig
    layers: list[LstmLayer]
    head_w: np.ndarray
    head_b: float
    trained: bool = False
    hour_scale: float = HOUR_SCALE
    minute_scale: float = MINUTE_SCALE

    @classmethod
    def initialize(cls, config: LstmConfig) -> "LstmModel":
        rng = np.random.default_rng(config.seed)
        H = config.hidden_units
        bound = 1.0 / math.sqrt(H)
        layers = []
        D = config.input_width
        for _ in range(config.num_layers):
            W = rng.uniform(-bound, bound, (D, 4 * H))
            U = rng.uniform(-bound, bound, (H, 4 * H))
            b = rng.uniform(-bound, bound, 4 * H)
            layers.append(LstmLayer(W, U, b))
            D = H
        head_w = rng.uniform(-bound, bound, H)
        head_b = float(rng.uniform(-bound, bound))
        return cls(config, layers, head_w, head_b)

    # flat parameter view, used by the optimizer and gradient checks
    def blocks(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for k, layer in enumerate(self.layers):
            out += [(f"layer{k}.W", layer.W), (f"layer{k}.U", layer.U), (f"layer{k}.b", layer.b)]
        out.append(("head.w", self.head_w))
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.blocks()] + [[self.head_b]])

    def set_flat(self, theta: np.ndarray):
        pos = 0
        for _, a in self.blocks():
            a[...] = theta[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        self.head_b = float(theta[pos])

    def copy(self) -> "LstmModel":
        return LstmModel(
            self.config,
            [LstmLayer(l.W.copy(), l.U.copy(), l.b.copy()) for l in self.layers],
            self.head_w.copy(), self.head_b, self.trained, self.hour_scale, self.minute_scale,
        )

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.get_flat())))


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    states: list[tuple]
    top: np.ndarray


def forward(model: LstmModel, X: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Predictions ``(T, B)`` in scaled units for time-major inputs ``(T, B, D)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3 or X.shape[2] != model.config.input_width or X.shape[0] < 1:
        raise ShapeMismatch(f"expected (T>=1, B, {model.config.input_width}) inputs, got {X.shape}")
    inputs, states = [], []
    h = np.ascontiguousarray(X)
    for layer in model.layers:
        inputs.append(h)
        Hs, Cs, G, TC = kernels.lstm_forward(h, layer.W, layer.U, layer.b)
        states.append((Hs, Cs, G, TC))
        h = np.ascontiguousarray(Hs[1:])
    pred = h @ model.head_w + model.head_b
    return pred, ForwardCache(inputs, states, h)


def predict(model: LstmModel, X: np.ndarray) -> np.ndarray:
    return forward(model, X)[0]


def mse(pred: np.ndarray, Y: np.ndarray) -> float:
    d = pred - Y
    return float(np.mean(d * d))


def loss_and_grads(model: LstmModel, X: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient as a flat vector (``get_flat`` order)."""
    pred, cache = forward(model, X)
    if pred.shape != Y.shape:
        raise ShapeMismatch(f"targets {Y.shape} do not match predictions {pred.shape}")
    diff = pred - Y
    loss = float(np.mean(diff * diff))
    dpred = (2.0 / diff.size) * diff
    d_head_w = np.tensordot(cache.top, dpred, axes=([0, 1], [0, 1]))
    d_head_b = float(dpred.sum())
    dH = np.ascontiguousarray(dpred[:, :, None] * model.head_w)
    grads = []
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        Hs, Cs, G, TC = cache.states[k]
        dX, dW, dU, db = kernels.lstm_backward(cache.inputs[k], layer.W, layer.U, Hs, Cs, G, TC, dH)
        grads.append((dW, dU, db))
        dH = np.ascontiguousarray(dX)
    flat = []
    for dW, dU, db in reversed(grads):
        flat += [dW.ravel(), dU.ravel(), db.ravel()]
    flat += [d_head_w.ravel(), [d_head_b]]
    return loss, np.concatenate(flat)


# ---------------------------------------------------------------- training

@dataclass
class TrainingTrace:
    """Per-epoch training loss (scaled units; entry 0 is the untrained model).

    ``epoch_train_mse`` and ``epoch_test_mse`` are unscaled (minutes squared)
    samples from the last quarter of training, the material for
    within-run box plots.
    """

    train_mse: list[float]
    test_mse: Optional[float] = None
    final_train_mse: Optional[float] = None
    wall_time: float = 0.0
    epoch_train_mse: list[float] = field(default_factory=list)
    epoch_test_mse: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.train_mse) - 1

    def to_json(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, size: int, lr: float, betas=ADAM_BETAS, eps: float = ADAM_EPS):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grad
        self.v = self.b2 * self.v + (1.0 - self.b2) * grad * grad
        mhat = self.m / (1.0 - self.b1 ** self.t)
        vhat = self.v / (1.0 - self.b2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train(
    model: LstmModel,
    data: SequenceSet,
    config: Optional[LstmConfig] = None,
    *,
    test: Optional[SequenceSet] = None,
    epochs: Optional[int] = None,
) -> TrainingTrace:
    """Mini-batch BPTT with Adam; updates ``model`` in place.

    ``config`` defaults to the model's own; ``epochs`` overrides its epoch
    count (used for fine-tuning).  Batches come from a fresh seeded shuffle
    every epoch, and the last batch of an epoch may be short.
    """
    config = config or model.config
    n_epochs = int(epochs if epochs is not None else config.epochs)
    n = len(data)
    if n == 0:
        raise SeriesTooShort("no training sequences")
    if config.batch_size > n:
        raise InvalidConfig(f"batch_size {config.batch_size} exceeds {n} training sequences")
    rng = np.random.default_rng([config.seed, 1])
    started = time.perf_counter()
    X_all, Y_all = data.time_major()
    trace = TrainingTrace(train_mse=[mse(predict(model, X_all), Y_all)])
    theta = model.get_flat()
    opt = Adam(theta.size, config.learning_rate)
    tail_from = n_epochs - max(n_epochs // 4, 1) + 1
    test_every = max(1, (n_epochs - tail_from + 1) // 25)
    for epoch in range(1, n_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            X, Y = data.time_major(idx)
            loss, grad = loss_and_grads(model, X, Y)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NonFiniteLoss(f"non-finite loss or gradient at epoch {epoch}")
            total += loss * idx.size
            theta = opt.step(theta, grad)
            model.set_flat(theta)
        epoch_loss = total / n
        trace.train_mse.append(epoch_loss)
        if epoch >= tail_from:
            trace.epoch_train_mse.append(epoch_loss * MINUTE_SCALE ** 2)
            if test is not None and (n_epochs - epoch) % test_every == 0:
                trace.epoch_test_mse.append(evaluate_mse(model, test))
    if not model.all_finite():
        raise NonFiniteLoss("training produced non-finite weights")
    model.trained = True
    trace.final_train_mse = mse(predict(model, X_all), Y_all)
    if test is not None:
        trace.test_mse = evaluate_mse(model, test)
    trace.wall_time = time.perf_counter() - started
    return trace


def evaluate_mse(model: LstmModel, data: SequenceSet) -> float:
    """Mean squared error in minutes squared."""
    X, Y = data.time_major()
    return mse(predict(model, X), Y) * MINUTE_SCALE ** 2


def predict_cycle(model: LstmModel, start_hour: int = 0) -> np.ndarray:
    """The next 24 hours in minutes, clamped to [0, 60], starting at ``start_hour``."""
    if not model.trained:
        raise UntrainedModel("model has not been trained")
    hours = (start_hour + np.arange(HOURS_PER_DAY)) % HOURS_PER_DAY
    X = encode_hours(hours, model.config.cyclic_encoding)[:, None, :]
    return np.clip(unscale(predict(model, X)[:, 0]), 0.0, MINUTE_SCALE)


# ---------------------------------------------------------------- checkpoints

def model_to_json(model: LstmModel) -> dict:
    blocks = []
    for name, a in model.blocks():
        blocks.append({"name": name, "shape": list(a.shape), "dims": _dims(name), "data": a.ravel().tolist()})
    blocks.append({"name": "head.b", "shape": [], "dims": [], "data": [model.head_b]})
    return {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": model.config.to_json(),
        "seed": model.config.seed,
        "trained": model.trained,
        "scaling": {"hour": model.hour_scale, "minutes": model.minute_scale},
        "gate_order": ["input", "forget", "candidate", "output"],
        "blocks": blocks,
    }


def _dims(name: str) -> list[str]:
    kind = name.rsplit(".", 1)[1]
    return {"W": ["input", "gates"], "U": ["hidden", "gates"], "b": ["gates"], "w": ["hidden"]}[kind]


def model_from_json(doc) -> LstmModel:
    if doc.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise InvalidConfig(f"unsupported checkpoint version {doc.get('checkpoint_version')!r}")
    config = LstmConfig.from_json(doc["config"])
    model = LstmModel.initialize(config)
    by_name = {b["name"]: b for b in doc["blocks"]}
    for name, a in model.blocks():
        blk = by_name[name]
        if list(a.shape) != list(blk["shape"]):
            raise ShapeMismatch(f"{name}: checkpoint shape {blk['shape']} != {list(a.shape)}")
        a[...] = np.array(blk["data"], dtype=np.float64).reshape(a.shape)
    model.head_b = float(by_name["head.b"]["data"][0])
    model.trained = bool(doc.get("trained", False))
    model.hour_scale = float(doc["scaling"]["hour"])
    model.minute_scale = float(doc["scaling"]["minutes"])
    return model


def save_model(model: LstmModel, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_json(model), sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_model(path) -> LstmModel:
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def with_overrides(config: LstmConfig, **kw) -> LstmConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
