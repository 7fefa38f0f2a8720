"""Two-stage LSTM over context-aware then action-aware features, plus the
fusion variants used for ablation.

Layouts per architecture (``H`` hidden units, ``N`` classes):

    multistage  stage1: LSTM(D_c) -> head1;  stage2: LSTM(H + D_a [+ D_f]) -> head2
    swapped     stage1: LSTM(D_a) -> head1;  stage2: LSTM(H + D_c [+ D_f]) -> head2
    concat      stage1: LSTM(D_c + D_a [+ D_f]) -> head1; both prediction streams are head1
    parallel    stage1: LSTM(D_c), stage2: LSTM(D_a [+ D_f]); head1 over [h1, h2] (2H -> N)

Sequences are time-major: ``[T, D]`` for one sample or ``[T, B, D]`` for a batch.
"""

import enum
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import lstm
from . import numkernel as nk
from .errors import ConfigError, DimensionError, FormatError
from .losses import LossKind

CHECKPOINT_MAGIC = b"MSL1"
CHECKPOINT_VERSION = 1
DEFAULT_HIDDEN = 2048


class ArchVariant(enum.Enum):
    MULTISTAGE = "multistage"
    CONCAT = "concat"
    SWAPPED = "swapped"
    PARALLEL = "parallel"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(a.value for a in cls)
            raise ValueError(f"unknown architecture {value!r}; expected one of {choices}") from None


class Pooling(enum.Enum):
    AVERAGE = "avgpool"
    LAST = "last"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"avgpool": cls.AVERAGE, "average": cls.AVERAGE, "averagepool": cls.AVERAGE,
                   "last": cls.LAST, "lastframe": cls.LAST}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown pooling {value!r}; expected avgpool or last") from None


@dataclass(frozen=True)
class ModelDims:
    d_ctx: int
    d_act: int
    n_classes: int
    hidden: int = DEFAULT_HIDDEN
    d_flow: int = 0

    def __post_init__(self):
        for name in ("d_ctx", "d_act", "n_classes", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_flow < 0:
            raise ConfigError(f"d_flow must be >= 0, got {self.d_flow}")


@dataclass
class Affine:
    w: nk.Tensor  # [N, H]
    b: nk.Tensor  # [N]

    def __call__(self, x):
        return nk.matmul(x, nk.transpose(self.w)) + self.b

    def named_tensors(self):
        return [("w", self.w), ("b", self.b)]

    def copy(self):
        return Affine(nk.Tensor(self.w.data.copy(), requires_grad=True, name="w"),
                      nk.Tensor(self.b.data.copy(), requires_grad=True, name="b"))


def _init_affine(n_in, n_out, rng):
    bound = 1.0 / np.sqrt(n_in)
    return Affine(nk.Tensor(rng.uniform(-bound, bound, size=(n_out, n_in)), requires_grad=True, name="w"),
                  nk.Tensor(np.zeros(n_out), requires_grad=True, name="b"))


def _layer_dims(dims, arch):
    """Input dims of (stage1, stage2) and the head input widths (head1, head2); None = absent."""
    H, f = dims.hidden, dims.d_flow
    if arch is ArchVariant.MULTISTAGE:
        return (dims.d_ctx, H + dims.d_act + f), (H, H)
    if arch is ArchVariant.SWAPPED:
        return (dims.d_act, H + dims.d_ctx + f), (H, H)
    if arch is ArchVariant.CONCAT:
        return (dims.d_ctx + dims.d_act + f, None), (H, None)
    return (dims.d_ctx, dims.d_act + f), (2 * H, None)


@dataclass
class MsLstmModel:
    dims: ModelDims
    arch: ArchVariant
    stage1: lstm.LstmParams
    head1: Affine
    stage2: lstm.LstmParams | None = None
    head2: Affine | None = None
    seed: int = 0
    loss: LossKind = LossKind.PLGL
    meta: dict = field(default_factory=dict)

    def named_parameters(self):
        """Parameters in checkpoint order: stage1, head1, stage2, head2."""
        out = []
        for prefix, part in (("stage1", self.stage1), ("head1", self.head1),
                             ("stage2", self.stage2), ("head2", self.head2)):
            if part is not None:
                out.extend((f"{prefix}.{n}", t) for n, t in part.named_tensors())
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def copy(self):
        return MsLstmModel(self.dims, self.arch, self.stage1.copy(), self.head1.copy(),
                           self.stage2.copy() if self.stage2 is not None else None,
                           self.head2.copy() if self.head2 is not None else None,
                           self.seed, self.loss, dict(self.meta))

    def n_params(self):
        return sum(t.data.size for t in self.parameters())


def init_model(dims, arch=ArchVariant.MULTISTAGE, seed=0, loss=LossKind.PLGL):
    arch = ArchVariant.parse(arch)
    (d1, d2), (h1, h2) = _layer_dims(dims, arch)
    rng = np.random.default_rng(seed)
    sub = [int(s) for s in rng.integers(0, 2**63 - 1, size=4)]
    H, N = dims.hidden, dims.n_classes
    stage1 = lstm.init_params(d1, H, sub[0])
    stage2 = lstm.init_params(d2, H, sub[1]) if d2 is not None else None
    head1 = _init_affine(h1, N, np.random.default_rng(sub[2]))
    head2 = _init_affine(h2, N, np.random.default_rng(sub[3])) if h2 is not None else None
    return MsLstmModel(dims, arch, stage1, head1, stage2, head2, seed=seed, loss=LossKind.parse(loss))


def _time_distributed(head, hs):
    """Apply an affine head + softmax to a list of ``[B, H]`` states; returns ``[T, B, N]``.

    The head runs once per step so that frame t is computed identically
    whatever the sequence length (BLAS results can depend on row count).
    """
    return nk.softmax(nk.stack([head(h) for h in hs]), axis=-1)


def _split_steps(x):
    if nk._tracks(x):
        return [x[t] for t in range(x.shape[0])]
    return [nk.Tensor(x.data[t]) for t in range(x.shape[0])]


def forward(m, ctx, act, flow=None):
    """Per-frame class probabilities ``(pred_c, pred_a)`` of the two stages.

    For ``concat`` and ``parallel`` there is one prediction stream and both
    returned values are the same tensor.
    """
    ctx, act = nk.as_tensor(ctx), nk.as_tensor(act)
    single = ctx.ndim == 2
    if single:
        ctx = nk.reshape(ctx, (ctx.shape[0], 1, ctx.shape[1]))
        act = nk.reshape(act, (act.shape[0], 1, act.shape[1])) if act.ndim == 2 else act
    if flow is not None:
        flow = nk.as_tensor(flow)
        if flow.ndim == 2:
            flow = nk.reshape(flow, (flow.shape[0], 1, flow.shape[1]))
    _check_inputs(m.dims, ctx, act, flow)

    cs, as_ = _split_steps(ctx), _split_steps(act)
    fs = _split_steps(flow) if flow is not None else None
    arch = m.arch
    if arch in (ArchVariant.MULTISTAGE, ArchVariant.SWAPPED):
        first, second = (cs, as_) if arch is ArchVariant.MULTISTAGE else (as_, cs)
        h1 = lstm.unroll_steps(m.stage1, first)
        pred_c = _time_distributed(m.head1, h1)
        parts = [[h, x] for h, x in zip(h1, second)]
        if fs is not None:
            for p, f in zip(parts, fs):
                p.append(f)
        h2 = lstm.unroll_steps(m.stage2, [nk.concat(p, axis=-1) for p in parts])
        pred_a = _time_distributed(m.head2, h2)
    elif arch is ArchVariant.CONCAT:
        xs = [nk.concat([c, a] + ([fs[t]] if fs is not None else []), axis=-1)
              for t, (c, a) in enumerate(zip(cs, as_))]
        pred_c = pred_a = _time_distributed(m.head1, lstm.unroll_steps(m.stage1, xs))
    else:
        hc = lstm.unroll_steps(m.stage1, cs)
        second = as_ if fs is None else [nk.concat([a, f], axis=-1) for a, f in zip(as_, fs)]
        ha = lstm.unroll_steps(m.stage2, second)
        merged = [nk.concat([a, b], axis=-1) for a, b in zip(hc, ha)]
        pred_c = pred_a = _time_distributed(m.head1, merged)

    if single:
        T, N = pred_a.shape[0], m.dims.n_classes
        same = pred_c is pred_a
        pred_a = nk.reshape(pred_a, (T, N))
        pred_c = pred_a if same else nk.reshape(pred_c, (T, N))
    return pred_c, pred_a


def _check_inputs(dims, ctx, act, flow):
    if ctx.ndim != 3 or act.ndim != 3:
        raise DimensionError(f"ctx/act must be [T, D] or [T, B, D], got {ctx.shape} and {act.shape}")
    if ctx.shape[0] == 0:
        raise DimensionError("empty sequence")
    if ctx.shape[:2] != act.shape[:2]:
        raise DimensionError(f"ctx {ctx.shape} and act {act.shape} disagree in length or batch")
    if ctx.shape[2] != dims.d_ctx:
        raise DimensionError(f"ctx has {ctx.shape[2]} features, model expects {dims.d_ctx}")
    if act.shape[2] != dims.d_act:
        raise DimensionError(f"act has {act.shape[2]} features, model expects {dims.d_act}")
    if flow is None and dims.d_flow:
        raise DimensionError(f"model expects flow features of dim {dims.d_flow}")
    if flow is not None:
        if not dims.d_flow:
            raise DimensionError("flow features supplied to a model without a flow stream")
        if flow.shape[:2] != ctx.shape[:2] or flow.shape[2] != dims.d_flow:
            raise DimensionError(f"flow {flow.shape} inconsistent with ctx {ctx.shape} / d_flow {dims.d_flow}")


def pool_predictions(pred_a, pooling=Pooling.AVERAGE):
    """Class index from a ``[T, N]`` (or ``[T, B, N]``) probability sequence. Ties go to the lowest index."""
    pooling = Pooling.parse(pooling)
    p = pred_a.data if isinstance(pred_a, nk.Tensor) else np.asarray(pred_a)
    if pooling is Pooling.AVERAGE:
        scores = nk.mean_over_time(p).data
    else:
        scores = p[-1]
    return np.argmax(scores, axis=-1)


def predict(m, ctx, act, flow=None, pooling=Pooling.AVERAGE):
    with nk.no_grad():
        _, pred_a = forward(m, ctx, act, flow)
    out = pool_predictions(pred_a, pooling)
    return int(out) if np.ndim(out) == 0 else out


def anticipate(m, ctx, act, flow=None, t=None):
    """Average-pooled prediction from the first ``t`` frames only."""
    T = np.shape(ctx.data if isinstance(ctx, nk.Tensor) else ctx)[0]
    if t is None or not 1 <= t <= T:
        raise ValueError(f"prefix length t must be in [1, {T}], got {t}")
    cut = lambda x: None if x is None else (x.data if isinstance(x, nk.Tensor) else np.asarray(x))[:t]
    return predict(m, cut(ctx), cut(act), cut(flow), Pooling.AVERAGE)


# --- checkpoints -----------------------------------------------------------

def expected_shapes(dims, arch):
    (d1, d2), (h1, h2) = _layer_dims(dims, ArchVariant.parse(arch))
    H, N = dims.hidden, dims.n_classes
    shapes = [(f"stage1.{k}", s) for k, s in lstm.param_shapes(d1, H).items()]
    shapes += [("head1.w", (N, h1)), ("head1.b", (N,))]
    if d2 is not None:
        shapes += [(f"stage2.{k}", s) for k, s in lstm.param_shapes(d2, H).items()]
    if h2 is not None:
        shapes += [("head2.w", (N, h2)), ("head2.b", (N,))]
    return shapes


def checkpoint_param_count(dims, arch):
    return sum(int(np.prod(s)) for _, s in expected_shapes(dims, arch))


def _header(m):
    return {
        "format_version": CHECKPOINT_VERSION,
        "arch": m.arch.value,
        "dims": asdict(m.dims),
        "loss": m.loss.value,
        "seed": m.seed,
        "meta": m.meta,
    }


def checkpoint_bytes(m):
    header = json.dumps(_header(m), sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in m.parameters())
    return CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + blob


def save_checkpoint(m, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(m))


def read_checkpoint_header(buf):
    """Parse magic + JSON header. Returns ``(header_dict, blob_offset)``."""
    if len(buf) < 4:
        raise FormatError("truncated checkpoint: missing magic", offset=len(buf))
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {bytes(buf[:4])!r}", offset=0)
    if len(buf) < 8:
        raise FormatError("truncated checkpoint: missing header length", offset=len(buf))
    (hlen,) = struct.unpack_from("<I", buf, 4)
    if len(buf) < 8 + hlen:
        raise FormatError(f"truncated checkpoint header: need {hlen} bytes", offset=len(buf))
    try:
        header = json.loads(bytes(buf[8:8 + hlen]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", offset=8) from None
    return header, 8 + hlen


def checkpoint_from_bytes(buf, expected_dims=None):
    header, off = read_checkpoint_header(buf)
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('format_version')!r}", offset=8)
    try:
        dims = ModelDims(**header["dims"])
        arch = ArchVariant.parse(header["arch"])
        loss = LossKind.parse(header["loss"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid checkpoint header: {exc}", offset=8) from None
    if expected_dims is not None and expected_dims != dims:
        raise ConfigError(f"checkpoint dims {dims} do not match expected {expected_dims}")
    arrays = {}
    for name, shape in expected_shapes(dims, arch):
        n = int(np.prod(shape))
        if len(buf) < off + 8 * n:
            raise FormatError(f"truncated parameter blob while reading {name}", offset=len(buf))
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 8 * n
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after parameter blob", offset=off)
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise FormatError(f"non-finite values in {name}")

    def part(prefix):
        sub = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith(prefix + ".")}
        return sub or None

    s1, s2, hd1, hd2 = part("stage1"), part("stage2"), part("head1"), part("head2")
    mk_aff = lambda d: Affine(nk.Tensor(d["w"], requires_grad=True, name="w"),
                              nk.Tensor(d["b"], requires_grad=True, name="b")) if d else None
    return MsLstmModel(dims, arch,
                       lstm.LstmParams.from_arrays(s1), mk_aff(hd1),
                       lstm.LstmParams.from_arrays(s2) if s2 else None, mk_aff(hd2),
                       seed=int(header.get("seed", 0)), loss=loss, meta=header.get("meta", {}))


def load_checkpoint(path, expected_dims=None):
    with open(path, "rb") as fh:
        buf = fh.read()
    return checkpoint_from_bytes(buf, expected_dims)
