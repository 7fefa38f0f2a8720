"""Mini-batch SGD with momentum on the two-stage loss."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import numkernel as nk
from .data import FrameSelection, select_dataset_frames
from .errors import ConfigError
from .losses import LossKind, loss_total, one_hot_targets
from .model import Pooling, forward, pool_predictions
from .rng import Xoshiro256


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10  # no published value; pick per experiment
    weight_decay: float = 0.0
    loss: LossKind = LossKind.PLGL
    seed: int = 0
    frame_selection: FrameSelection = FrameSelection.FIRST_K
    frames: int = 0  # 0 keeps every frame
    clip_norm: float = 5.0  # <= 0 disables clipping
    threads: int = 1

    def __post_init__(self):
        self.loss = LossKind.parse(self.loss)
        self.frame_selection = FrameSelection.parse(self.frame_selection)
        self.validate()

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.frames < 0:
            raise ConfigError(f"frames must be >= 0, got {self.frames}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        return self

    @classmethod
    def from_mapping(cls, values):
        """Build from string or typed values; unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(known[name].type, raw, key)
        return cls(**kwargs)


def _coerce(typ, raw, key):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None
    return raw


@dataclass
class EpochStats:
    epoch: int
    loss: float       # mean per-sample loss over the epoch's batches
    train_acc: float  # average-pooled accuracy on the training set after the epoch


def sgd_step(params, grads, velocity, cfg):
    """``v <- momentum*v - lr*(g + wd*theta)``; ``theta <- theta + v``. Returns new lists."""
    if not (len(params) == len(grads) == len(velocity)):
        raise ValueError("params, grads and velocity must have the same length")
    new_p, new_v = [], []
    for theta, g, v in zip(params, grads, velocity):
        if not (np.shape(theta) == np.shape(g) == np.shape(v)):
            raise ValueError(f"shape mismatch: param {np.shape(theta)}, grad {np.shape(g)}, "
                             f"velocity {np.shape(v)}")
        v2 = cfg.momentum * v - cfg.learning_rate * (g + cfg.weight_decay * theta)
        new_v.append(v2)
        new_p.append(theta + v2)
    return new_p, new_v


def clip_by_global_norm(grads, max_norm):
    if max_norm is None or max_norm <= 0:
        return grads
    norm = math.sqrt(math.fsum(float(np.sum(g * g)) for g in grads))
    if norm <= max_norm:
        return grads
    f = max_norm / norm
    return [g * f for g in grads]


def _chunk_grads(m, ds, idx, kind, weight):
    ctx, act, flow, labels = ds.batch(idx)
    pred_c, pred_a = forward(m, ctx, act, flow)
    per_sample = loss_total(pred_c, pred_a, one_hot_targets(labels, ctx.shape[0], m.dims.n_classes),
                            kind, reduce="none")
    loss = nk.scale(nk.tensor_sum(per_sample), weight / len(idx))
    m.zero_grad()
    loss.backward()
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in m.parameters()]
    return grads, per_sample.data.copy()


def batch_gradients(m, ds, idx, kind, threads=1):
    """Gradient of the batch-mean loss and the per-sample losses.

    With ``threads > 1`` the batch is split into chunks that run on model
    copies; results differ from the single-threaded path only by summation order.
    """
    kind = LossKind.parse(kind)
    idx = list(idx)
    if threads <= 1 or len(idx) < 2:
        return _chunk_grads(m, ds, idx, kind, 1.0)
    n = min(threads, len(idx))
    chunks = [c.tolist() for c in np.array_split(np.array(idx), n)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        results = list(pool.map(lambda c: _chunk_grads(m.copy(), ds, c, kind, len(c) / len(idx)), chunks))
    grads = [sum(gs) for gs in zip(*(r[0] for r in results))]
    return grads, np.concatenate([r[1] for r in results])


def check_compatible(m, ds):
    d = m.dims
    want = (d.d_ctx, d.d_act, d.d_flow, d.n_classes)
    got = (ds.d_ctx, ds.d_act, ds.d_flow, ds.n_classes)
    if want != got:
        raise ConfigError(f"dataset dims (d_ctx, d_act, d_flow, n_classes)={got} do not match "
                          f"model dims {want}")


def accuracy(m, ds, pooling=Pooling.AVERAGE, batch_size=256):
    if len(ds) == 0:
        return float("nan")
    correct = 0
    with nk.no_grad():
        for start in range(0, len(ds), batch_size):
            idx = range(start, min(start + batch_size, len(ds)))
            ctx, act, flow, labels = ds.batch(idx)
            _, pred_a = forward(m, ctx, act, flow)
            correct += int(np.sum(pool_predictions(pred_a, pooling) == labels))
    return correct / len(ds)


def train(model, ds, cfg, on_epoch=None):
    """Train a copy of ``model``. Returns ``(trained_model, history)``."""
    check_compatible(model, ds)
    if cfg.frames:
        ds = select_dataset_frames(ds, cfg.frames, cfg.frame_selection, cfg.seed)
    m = model.copy()
    m.loss = cfg.loss
    history = []
    if cfg.epochs == 0 or len(ds) == 0:
        return m, history
    params = m.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    rng = Xoshiro256(cfg.seed)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.shuffle(list(range(len(ds))))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads, per_sample = batch_gradients(m, ds, idx, cfg.loss, cfg.threads)
            grads = clip_by_global_norm(grads, cfg.clip_norm)
            new_p, velocity = sgd_step([p.data for p in params], grads, velocity, cfg)
            for p, val in zip(params, new_p):
                p.data = val
            losses.extend(per_sample.tolist())
        m.zero_grad()
        stats = EpochStats(epoch, math.fsum(losses) / len(losses), accuracy(m, ds))
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return m, history
