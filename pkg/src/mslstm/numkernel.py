"""Small reverse-mode autodiff kernel over float64 numpy arrays.

Every op returns a new ``Tensor``; when any input requires a gradient the op
also records a closure mapping the output gradient to input gradients.
``Tensor.backward`` walks the recorded graph in reverse topological order.

Broadcasting is limited to the trailing-suffix case needed for bias terms
(``[B, H] + [H]``).
"""

import contextlib
import threading

import numpy as np

from .errors import DimensionError, EmptySequenceError, NonFiniteError

_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    # make ``ndarray * Tensor`` defer to Tensor.__rmul__
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without grad needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _tracks(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar; constants are plain numbers or arrays
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return hadamard(self, other)

    def __rmul__(self, other):
        return hadamard(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)


def _tracks(t):
    return t.requires_grad or t._backward is not None


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _tracks(p):
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("kernel op produced a non-finite value")
    out = Tensor(data)
    if grad_enabled() and any(_tracks(p) for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _check_broadcast(a, b, opname):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if len(sb) <= len(sa) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise DimensionError(f"{opname}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def hadamard(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "hadamard")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _result(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from exc
    return _result(out, (a,), lambda g: (g.reshape(old),))


def index(a, idx):
    """Basic (non-fancy) indexing."""
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _result(a.data[idx], (a,), back)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a):
    a = as_tensor(a)
    x = a.data
    return _result(np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0),))


def log(a):
    a = as_tensor(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return _result(out, (a,), lambda g: (g / x,))


def clip(a, lo, hi):
    """Clamp into ``[lo, hi]``; gradient is zero where clamping was active."""
    a = as_tensor(a)
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _result(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def tensor_sum(a, axis=None):
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(ax % len(shape) for ax in axes)
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return _result(np.sum(a.data, axis=axis), (a,), back)


def softmax(a, axis=-1):
    """Softmax with max subtraction."""
    a = as_tensor(a)
    if a.data.size == 0 or a.shape[axis] == 0:
        raise DimensionError("softmax of an empty vector")
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / np.sum(e, axis=axis, keepdims=True)
    return _result(s, (a,), lambda g: (s * (g - np.sum(g * s, axis=axis, keepdims=True)),))


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of nothing")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([t.data for t in ts], axis=ax), tuple(ts),
                   lambda g: tuple(np.split(g, cuts, axis=ax)))


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise EmptySequenceError("stack of an empty sequence")
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise DimensionError(f"stack: shapes {ts[0].shape} and {t.shape} differ")
    n = len(ts)
    return _result(np.stack([t.data for t in ts], axis=axis), tuple(ts),
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def mean_over_time(seq):
    """Column mean of a ``[T, ...]`` sequence."""
    seq = as_tensor(seq)
    if seq.ndim == 0 or seq.shape[0] == 0:
        raise EmptySequenceError("mean over an empty sequence")
    T = seq.shape[0]
    shape = seq.shape
    return _result(np.mean(seq.data, axis=0), (seq,),
                   lambda g: (np.broadcast_to(g / T, shape).copy(),))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "log": log}
_BINARY = {"add": add, "sub": sub, "hadamard": hadamard}


def elementwise(op, *args):
    """Dispatch a pointwise op by name."""
    if op in _UNARY:
        if len(args) != 1:
            raise TypeError(f"{op} takes one argument")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise TypeError(f"{op} takes two arguments")
        a, b = as_tensor(args[0]), as_tensor(args[1])
        if a.shape != b.shape:
            raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")
