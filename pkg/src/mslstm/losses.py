"""Time-weighted sequence losses on per-frame class probabilities.

All four losses share one form,

    L = -(1/N) sum_t sum_k [ a_t y_t(k) log p_t(k) + b_t (1 - y_t(k)) log(1 - p_t(k)) ]

and differ only in the false-negative weights ``a`` and false-positive
weights ``b``:

    CE    a = b = [0, ..., 0, 1]
    EGL   a = b = exp(-(T - t))
    LGL   a = b = t / T
    PLGL  a = 1, b = t / T

Probabilities are clamped to ``[EPS, 1 - EPS]`` before the logs.
Predictions are ``[T, N]`` for one sample or ``[T, B, N]`` for a batch; the
batch reduction is the mean over samples.
"""

import enum

import numpy as np

from . import numkernel as nk
from .errors import DimensionError, EmptySequenceError

EPS = 1e-7


class LossKind(enum.Enum):
    CE = "ce"
    EGL = "egl"
    LGL = "lgl"
    PLGL = "plgl"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown loss {value!r}; expected one of ce, egl, lgl, plgl") from None

    @property
    def label(self):
        return {"ce": "CE", "egl": "EGL", "lgl": "LGL", "plgl": "pLGL"}[self.value]


def time_weights(kind, T):
    """``(fn_weights, fp_weights)``, each of length ``T``, for frames ``t = 1..T``."""
    kind = LossKind.parse(kind)
    if T < 1:
        raise EmptySequenceError("loss over an empty sequence")
    t = np.arange(1, T + 1, dtype=np.float64)
    if kind is LossKind.CE:
        w = np.zeros(T)
        w[-1] = 1.0
        return w, w.copy()
    if kind is LossKind.EGL:
        w = np.exp(-(T - t))
        return w, w.copy()
    if kind is LossKind.LGL:
        w = t / T
        return w, w.copy()
    return np.ones(T), t / T


def one_hot_targets(labels, T, N):
    """Constant-over-time one-hot targets: ``[T, N]`` for an int, ``[T, B, N]`` for a sequence."""
    if np.ndim(labels) == 0:
        y = np.zeros((T, N))
        y[:, int(labels)] = 1.0
        return y
    labels = np.asarray(labels, dtype=np.int64)
    y = np.zeros((T, labels.shape[0], N))
    y[:, np.arange(labels.shape[0]), labels] = 1.0
    return y


def weighted_loss(pred, target, fn_w, fp_w, reduce="mean"):
    """The shared weighted form; ``reduce='none'`` returns per-sample losses."""
    pred = nk.as_tensor(pred)
    y = np.asarray(target, dtype=np.float64)
    if pred.shape != y.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {y.shape}")
    if pred.ndim not in (2, 3):
        raise DimensionError(f"predictions must be [T, N] or [T, B, N], got {pred.shape}")
    T, N = pred.shape[0], pred.shape[-1]
    if T == 0:
        raise EmptySequenceError("loss over an empty sequence")
    tshape = (T,) + (1,) * (pred.ndim - 1)
    pos_w = np.reshape(fn_w, tshape) * y
    neg_w = np.reshape(fp_w, tshape) * (1.0 - y)
    p = nk.clip(pred, EPS, 1.0 - EPS)
    terms = pos_w * nk.log(p) + neg_w * nk.log(1.0 - p)
    if pred.ndim == 2:
        return nk.scale(nk.tensor_sum(terms), -1.0 / N)
    per_sample = nk.scale(nk.tensor_sum(terms, axis=(0, 2)), -1.0 / N)
    if reduce == "none":
        return per_sample
    return nk.scale(nk.tensor_sum(per_sample), 1.0 / pred.shape[1])


def sequence_loss(pred, target, kind, reduce="mean"):
    fn_w, fp_w = time_weights(kind, nk.as_tensor(pred).shape[0])
    return weighted_loss(pred, target, fn_w, fp_w, reduce=reduce)


def loss_ce(pred, target, reduce="mean"):
    """Binary cross-entropy on the final frame only."""
    return sequence_loss(pred, target, LossKind.CE, reduce)


def loss_egl(pred, target, reduce="mean"):
    return sequence_loss(pred, target, LossKind.EGL, reduce)


def loss_lgl(pred, target, reduce="mean"):
    return sequence_loss(pred, target, LossKind.LGL, reduce)


def loss_plgl(pred, target, reduce="mean"):
    """False negatives weighted 1 at every frame; false positives ramp as t/T."""
    return sequence_loss(pred, target, LossKind.PLGL, reduce)


def loss_total(pred_c, pred_a, target, kind, reduce="mean"):
    """Stage-one loss plus stage-two loss."""
    pred_c, pred_a = nk.as_tensor(pred_c), nk.as_tensor(pred_a)
    if pred_c.shape != pred_a.shape:
        raise DimensionError(f"stage predictions differ in shape: {pred_c.shape} vs {pred_a.shape}")
    return nk.add(sequence_loss(pred_c, target, kind, reduce),
                  sequence_loss(pred_a, target, kind, reduce))
