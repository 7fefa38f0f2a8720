"""Peephole LSTM with full (H x H) peephole matrices.

    i_t = sigmoid(W_i x_t + U_i h_{t-1} + V_i c_{t-1} + b_i)
    f_t = sigmoid(W_f x_t + U_f h_{t-1} + V_f c_{t-1} + b_f)
    c_t = f_t * c_{t-1} + i_t * tanh(W_c x_t + U_c h_{t-1} + b_c)
    o_t = sigmoid(W_o x_t + U_o h_{t-1} + V_o c_t + b_o)
    h_t = o_t * tanh(c_t)

The output-gate peephole reads the updated cell ``c_t``.
"""

from dataclasses import dataclass, fields

import numpy as np

from . import numkernel as nk
from .errors import DimensionError, EmptySequenceError

# checkpoint order: gates i, f, c, o; each W, U, V, b (no V on the candidate)
PARAM_ORDER = ("w_i", "u_i", "v_i", "b_i",
               "w_f", "u_f", "v_f", "b_f",
               "w_c", "u_c", "b_c",
               "w_o", "u_o", "v_o", "b_o")


@dataclass
class LstmParams:
    w_i: nk.Tensor
    u_i: nk.Tensor
    v_i: nk.Tensor
    b_i: nk.Tensor
    w_f: nk.Tensor
    u_f: nk.Tensor
    v_f: nk.Tensor
    b_f: nk.Tensor
    w_c: nk.Tensor
    u_c: nk.Tensor
    b_c: nk.Tensor
    w_o: nk.Tensor
    u_o: nk.Tensor
    v_o: nk.Tensor
    b_o: nk.Tensor

    def __post_init__(self):
        H, D = self.w_i.shape
        for name, shape in param_shapes(D, H).items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionError(f"LstmParams.{name}: expected {shape}, got {got}")

    @property
    def input_dim(self):
        return self.w_i.shape[1]

    @property
    def hidden(self):
        return self.w_i.shape[0]

    def named_tensors(self):
        return [(name, getattr(self, name)) for name in PARAM_ORDER]

    @classmethod
    def from_arrays(cls, arrays, requires_grad=True):
        return cls(**{k: nk.Tensor(np.array(v, dtype=np.float64), requires_grad=requires_grad, name=k)
                      for k, v in arrays.items()})

    def copy(self):
        return type(self)(**{f.name: nk.Tensor(getattr(self, f.name).data.copy(),
                                               requires_grad=True, name=f.name)
                             for f in fields(self)})


@dataclass
class LstmState:
    h: nk.Tensor
    c: nk.Tensor


def param_shapes(D, H):
    shapes = {}
    for g in "ifco":
        shapes[f"w_{g}"] = (H, D)
        shapes[f"u_{g}"] = (H, H)
        if g != "c":
            shapes[f"v_{g}"] = (H, H)
        shapes[f"b_{g}"] = (H,)
    return {k: shapes[k] for k in PARAM_ORDER}


def n_params(D, H):
    return sum(int(np.prod(s)) for s in param_shapes(D, H).values())


def init_params(D, H, seed):
    """Uniform weights in [-1/sqrt(H), 1/sqrt(H)]; forget bias 1, other biases 0."""
    if D < 1 or H < 1:
        raise DimensionError(f"need D, H >= 1, got D={D}, H={H}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(H)
    arrays = {}
    for name, shape in param_shapes(D, H).items():
        if name.startswith("b_"):
            arrays[name] = np.full(shape, 1.0 if name == "b_f" else 0.0)
        else:
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return LstmParams.from_arrays(arrays)


def zero_state(H, batch=None):
    shape = (H,) if batch is None else (batch, H)
    return LstmState(nk.Tensor(np.zeros(shape)), nk.Tensor(np.zeros(shape)))


class _Transposed:
    """Weight transposes computed once per unroll instead of once per step."""

    def __init__(self, p):
        for name, t in p.named_tensors():
            setattr(self, name, nk.transpose(t) if t.ndim == 2 else t)


def _step(pt, x, h, c):
    i = nk.sigmoid(x @ pt.w_i + h @ pt.u_i + c @ pt.v_i + pt.b_i)
    f = nk.sigmoid(x @ pt.w_f + h @ pt.u_f + c @ pt.v_f + pt.b_f)
    g = nk.tanh(x @ pt.w_c + h @ pt.u_c + pt.b_c)
    c_new = f * c + i * g
    o = nk.sigmoid(x @ pt.w_o + h @ pt.u_o + c_new @ pt.v_o + pt.b_o)
    h_new = o * nk.tanh(c_new)
    return h_new, c_new


def _as_rows(t):
    return nk.reshape(t, (1, t.shape[0])) if t.ndim == 1 else t


def lstm_step(p, x_t, prev):
    """One LSTM update. ``x_t`` is ``[D]`` or a batch ``[B, D]``."""
    x_t = nk.as_tensor(x_t)
    if x_t.shape[-1] != p.input_dim:
        raise DimensionError(f"lstm_step: input has {x_t.shape[-1]} features, params expect {p.input_dim}")
    if prev.h.shape[-1] != p.hidden or prev.c.shape[-1] != p.hidden:
        raise DimensionError(f"lstm_step: state shapes {prev.h.shape}/{prev.c.shape} vs hidden {p.hidden}")
    single = x_t.ndim == 1
    h, c = _step(_Transposed(p), _as_rows(x_t), _as_rows(prev.h), _as_rows(prev.c))
    if single:
        h, c = nk.reshape(h, (p.hidden,)), nk.reshape(c, (p.hidden,))
    return LstmState(h, c)


def unroll_steps(p, xs):
    """Hidden states ``h_1..h_T`` as a list of ``[B, H]`` tensors.

    ``xs`` is either a list of ``[B, D]`` tensors or a ``[T, B, D]`` array/tensor.
    The initial state is zero.
    """
    if isinstance(xs, (list, tuple)):
        steps = [nk.as_tensor(x) for x in xs]
    else:
        xs = nk.as_tensor(xs)
        if nk._tracks(xs):
            steps = [xs[t] for t in range(xs.shape[0])]
        else:
            steps = [nk.Tensor(xs.data[t]) for t in range(xs.shape[0])]
    if not steps:
        raise EmptySequenceError("unroll over an empty sequence")
    if steps[0].shape[-1] != p.input_dim:
        raise DimensionError(f"unroll: input has {steps[0].shape[-1]} features, params expect {p.input_dim}")
    pt = _Transposed(p)
    B = steps[0].shape[0]
    h = nk.Tensor(np.zeros((B, p.hidden)))
    c = nk.Tensor(np.zeros((B, p.hidden)))
    out = []
    for x in steps:
        h, c = _step(pt, x, h, c)
        out.append(h)
    return out


def unroll(p, xs):
    """Run the LSTM over ``xs`` of shape ``[T, D]`` (or ``[T, B, D]``); returns ``[T, H]`` (or ``[T, B, H]``)."""
    xs = nk.as_tensor(xs)
    if xs.ndim < 1 or xs.shape[0] == 0:
        raise EmptySequenceError("unroll over an empty sequence")
    single = xs.ndim == 2
    if single:
        xs = nk.reshape(xs, (xs.shape[0], 1, xs.shape[1]))
    hs = nk.stack(unroll_steps(p, xs))
    if single:
        hs = nk.reshape(hs, (hs.shape[0], p.hidden))
    return hs
