"""Datasets of per-frame feature sequences: container, ``.fsd`` file format,
seeded synthetic generator, frame selection and geometric image augmentation.

Feature arrays are stored as float32 so that files round-trip bit-exactly.
"""

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .rng import Xoshiro256, derive_seed

DATASET_MAGIC = b"FSD1"
CROP_ASPECT = 320.0 / 240.0
OUT_SIZE = 224
MAX_ROTATION_DEG = 8.0
MIN_CROP_SCALE = 0.8


@dataclass
class Sample:
    label: int
    ctx: np.ndarray   # [K, D_c]
    act: np.ndarray   # [K, D_a]
    flow: np.ndarray | None = None  # [K, D_f]

    @property
    def length(self):
        return self.ctx.shape[0]


@dataclass
class Dataset:
    n_classes: int
    k: int
    d_ctx: int
    d_act: int
    d_flow: int = 0
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def validate(self):
        for i, s in enumerate(self.samples):
            if not 0 <= s.label < self.n_classes:
                raise ConfigError(f"sample {i}: label {s.label} outside [0, {self.n_classes})")
            want = [(s.ctx, self.d_ctx), (s.act, self.d_act)]
            if self.d_flow:
                if s.flow is None:
                    raise DimensionError(f"sample {i}: missing flow features")
                want.append((s.flow, self.d_flow))
            for arr, d in want:
                if arr.shape != (self.k, d):
                    raise DimensionError(f"sample {i}: feature shape {arr.shape} != {(self.k, d)}")
        return self

    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def batch(self, indices):
        """Time-major float64 arrays ``(ctx [K,B,D_c], act [K,B,D_a], flow | None, labels [B])``."""
        ss = [self.samples[i] for i in indices]
        ctx = np.stack([s.ctx for s in ss], axis=1).astype(np.float64)
        act = np.stack([s.act for s in ss], axis=1).astype(np.float64)
        flow = np.stack([s.flow for s in ss], axis=1).astype(np.float64) if self.d_flow else None
        return ctx, act, flow, np.array([s.label for s in ss], dtype=np.int64)


# --- synthetic generator ---------------------------------------------------

@dataclass
class GenConfig:
    """Synthetic dataset parameters.

    ``ctx_reliability`` is the chance a sample's context rows come from its own
    class prototype rather than the confuser class ``(label + 1) % N``.
    ``ambiguity_horizon`` is the number of leading frames over which action
    rows move linearly from the confuser prototype to the true one.
    """
    n_classes: int = 8
    n_samples: int = 128
    k: int = 20
    d_ctx: int = 16
    d_act: int = 16
    d_flow: int = 0
    noise_sigma: float = 0.3
    ctx_reliability: float = 0.7
    ambiguity_horizon: int = 10
    seed: int = 0

    def validate(self):
        checks = [
            (self.n_classes >= 1, "n_classes must be >= 1"),
            (self.n_samples >= 0, "n_samples must be >= 0"),
            (self.k >= 1, "k must be >= 1"),
            (self.d_ctx >= 1 and self.d_act >= 1, "feature dims must be >= 1"),
            (self.d_flow >= 0, "d_flow must be >= 0"),
            (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma), "noise_sigma must be >= 0"),
            (0.0 <= self.ctx_reliability <= 1.0, "ctx_reliability must be in [0, 1]"),
            (0 <= self.ambiguity_horizon <= self.k, "ambiguity_horizon must be in [0, k]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self


def _unit_vector(rng, d):
    v = np.array(rng.normals(d))
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.eye(d)[0]


def _interp_weights(K, a):
    """Weight on the true prototype at frames 1..K."""
    w = np.ones(K)
    if a >= 2:
        w[:a] = np.arange(a) / (a - 1)
    return w


def generate(cfg):
    """Draw a dataset.

    Draw order from one xoshiro256** stream seeded with ``cfg.seed``: context
    prototypes for classes 0..N-1, then action prototypes, then flow
    prototypes; then per sample: one uniform for context reliability, K*D_c
    context noise values, K*D_a action noise values, K*D_f flow noise values.
    Labels are assigned round-robin (sample i has label i mod N).
    """
    cfg.validate()
    rng = Xoshiro256(cfg.seed)
    N, K = cfg.n_classes, cfg.k
    ctx_protos = [_unit_vector(rng, cfg.d_ctx) for _ in range(N)]
    act_protos = [_unit_vector(rng, cfg.d_act) for _ in range(N)]
    flow_protos = [_unit_vector(rng, cfg.d_flow) for _ in range(N)] if cfg.d_flow else None
    w = _interp_weights(K, cfg.ambiguity_horizon)[:, None]
    sigma = cfg.noise_sigma
    samples = []
    for i in range(cfg.n_samples):
        label = i % N
        confuser = (label + 1) % N
        reliable = rng.random() < cfg.ctx_reliability
        proto = ctx_protos[label if reliable else confuser]
        ctx = proto[None, :] + sigma * np.array(rng.normals(K * cfg.d_ctx)).reshape(K, cfg.d_ctx)
        act_mean = (1.0 - w) * act_protos[confuser][None, :] + w * act_protos[label][None, :]
        act = act_mean + sigma * np.array(rng.normals(K * cfg.d_act)).reshape(K, cfg.d_act)
        flow = None
        if cfg.d_flow:
            flow = flow_protos[label][None, :] + sigma * np.array(rng.normals(K * cfg.d_flow)).reshape(K, cfg.d_flow)
            flow = flow.astype(np.float32)
        samples.append(Sample(label, ctx.astype(np.float32), act.astype(np.float32), flow))
    return Dataset(N, K, cfg.d_ctx, cfg.d_act, cfg.d_flow, samples)


def prototypes(cfg):
    """The class prototypes ``generate`` would draw, as ``(ctx [N,D_c], act [N,D_a])``."""
    rng = Xoshiro256(cfg.seed)
    ctx = np.array([_unit_vector(rng, cfg.d_ctx) for _ in range(cfg.n_classes)])
    act = np.array([_unit_vector(rng, cfg.d_act) for _ in range(cfg.n_classes)])
    return ctx, act


# --- frame selection -------------------------------------------------------

class FrameSelection(enum.Enum):
    FIRST_K = "first"
    RANDOM_K = "random"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"first": cls.FIRST_K, "firstk": cls.FIRST_K,
                   "random": cls.RANDOM_K, "randomk": cls.RANDOM_K}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown frame selection {value!r}; expected first or random") from None


def frame_indices(K, k_sel, strategy, seed):
    strategy = FrameSelection.parse(strategy)
    if not 1 <= k_sel <= K:
        raise ValueError(f"selected frame count {k_sel} outside [1, {K}]")
    if strategy is FrameSelection.FIRST_K:
        return list(range(k_sel))
    return sorted(Xoshiro256(seed).sample_indices(K, k_sel))


def select_frames(sample, k_sel, strategy=FrameSelection.FIRST_K, seed=0):
    """Keep ``k_sel`` frames: the first ones, or a random subset in temporal order."""
    idx = frame_indices(sample.length, k_sel, strategy, seed)
    pick = lambda a: None if a is None else a[idx]
    return Sample(sample.label, pick(sample.ctx), pick(sample.act), pick(sample.flow))


def select_dataset_frames(ds, k_sel, strategy=FrameSelection.FIRST_K, seed=0):
    """Apply ``select_frames`` to every sample; sample i uses a seed derived from ``(seed, i)``."""
    out = [select_frames(s, k_sel, strategy, derive_seed(seed, i)) for i, s in enumerate(ds.samples)]
    return Dataset(ds.n_classes, k_sel, ds.d_ctx, ds.d_act, ds.d_flow, out)


# --- geometric augmentation ------------------------------------------------

def bilinear_sample(img, ys, xs):
    """Sample ``img`` [H, W, C] at float coordinates with edge replication."""
    H, W = img.shape[:2]
    ys = np.clip(ys, 0.0, H - 1.0)
    xs = np.clip(xs, 0.0, W - 1.0)
    y0 = np.minimum(np.floor(ys).astype(np.int64), H - 1)
    x0 = np.minimum(np.floor(xs).astype(np.int64), W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    ay = (ys - y0)[..., None]
    ax = (xs - x0)[..., None]
    # lerp form keeps constant regions exactly constant
    top = img[y0, x0] + ax * (img[y0, x1] - img[y0, x0])
    bot = img[y1, x0] + ax * (img[y1, x1] - img[y1, x0])
    return top + ay * (bot - top)


def rotate(img, degrees):
    """Rotate about the image centre; bilinear with replicated borders."""
    H, W = img.shape[:2]
    if degrees == 0:
        return img.copy()
    th = math.radians(degrees)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    # inverse map: output pixel -> source location
    sx = math.cos(th) * dx + math.sin(th) * dy + cx
    sy = -math.sin(th) * dx + math.cos(th) * dy + cy
    return bilinear_sample(img, sy, sx)


def max_crop_size(H, W, aspect=CROP_ASPECT):
    """Largest ``(height, width)`` with width/height == aspect inside an H x W image."""
    if W / H >= aspect:
        return float(H), H * aspect
    return W / aspect, float(W)


def crop_resize(img, y0, x0, ch, cw, out=OUT_SIZE):
    """Resample the rectangle (y0, x0, ch, cw) to ``out x out`` using pixel-centre alignment."""
    oy = y0 + (np.arange(out) + 0.5) * (ch / out) - 0.5
    ox = x0 + (np.arange(out) + 0.5) * (cw / out) - 0.5
    yy, xx = np.meshgrid(oy, ox, indexing="ij")
    return bilinear_sample(img, yy, xx)


def augment_geometric(img, seed, *, flip=None, angle=None, scale=None):
    """Random flip, rotation in [-8, 8] degrees, 320/240 crop scaled by [0.8, 1], resize to 224x224.

    Five uniforms are always drawn in the order flip, angle, scale, y, x; the
    keyword overrides replace the corresponding drawn value.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 image, got shape {img.shape}")
    H, W = img.shape[:2]
    if H < 8 or W < 8:
        raise DimensionError(f"image {H}x{W} too small for augmentation (need >= 8x8)")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    rng = Xoshiro256(seed)
    u_flip, u_angle, u_scale, u_y, u_x = (rng.random() for _ in range(5))
    do_flip = (u_flip < 0.5) if flip is None else bool(flip)
    deg = (-MAX_ROTATION_DEG + 2 * MAX_ROTATION_DEG * u_angle) if angle is None else float(angle)
    s = (MIN_CROP_SCALE + (1.0 - MIN_CROP_SCALE) * u_scale) if scale is None else float(scale)

    lo, hi = img.min(), img.max()
    work = img[:, ::-1] if do_flip else img
    work = rotate(work, deg)
    ch, cw = max_crop_size(H, W)
    ch, cw = ch * s, cw * s
    y0 = u_y * (H - ch)
    x0 = u_x * (W - cw)
    out = crop_resize(work, y0, x0, ch, cw)
    return np.clip(out, lo, hi)


# --- .fsd files ------------------------------------------------------------

def dataset_bytes(ds):
    ds.validate()
    parts = [DATASET_MAGIC, struct.pack("<6I", len(ds), ds.n_classes, ds.k, ds.d_ctx, ds.d_act, ds.d_flow)]
    for s in ds.samples:
        parts.append(struct.pack("<I", s.label))
        parts.append(np.ascontiguousarray(s.ctx, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(s.act, dtype="<f4").tobytes())
        if ds.d_flow:
            parts.append(np.ascontiguousarray(s.flow, dtype="<f4").tobytes())
    return b"".join(parts)


def save(ds, path):
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(ds))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}: need {n} bytes, "
                              f"{len(self.buf) - self.off} left", offset=self.off)
        chunk = self.buf[self.off:self.off + n]
        self.off += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f32(self, shape, what):
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n, what), dtype="<f4").astype(np.float32).reshape(shape)


def read_dataset_header(buf):
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {bytes(magic)!r}", offset=0)
    names = ("n_samples", "n_classes", "k", "d_ctx", "d_act", "d_flow")
    return {n: r.u32(n) for n in names}, r


def dataset_from_bytes(buf):
    hdr, r = read_dataset_header(buf)
    K, N = hdr["k"], hdr["n_classes"]
    samples = []
    for i in range(hdr["n_samples"]):
        off = r.off
        label = r.u32(f"label of sample {i}")
        if label >= N:
            raise FormatError(f"sample {i} label {label} >= n_classes {N}", offset=off)
        ctx = r.f32((K, hdr["d_ctx"]), f"ctx of sample {i}")
        act = r.f32((K, hdr["d_act"]), f"act of sample {i}")
        flow = r.f32((K, hdr["d_flow"]), f"flow of sample {i}") if hdr["d_flow"] else None
        samples.append(Sample(label, ctx, act, flow))
    if r.off != len(buf):
        raise FormatError(f"{len(buf) - r.off} trailing bytes", offset=r.off)
    return Dataset(N, K, hdr["d_ctx"], hdr["d_act"], hdr["d_flow"], samples)


def load(path):
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())
