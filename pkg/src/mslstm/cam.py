"""Class activation maps and CAM-gated action-aware features.

Channel pooling is the spatial sum ``F_l = sum_xy f_l(x, y)``; with that
definition the pooled class score equals the spatial sum of its CAM exactly.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError

FMP_MAGIC = b"FMP1"


@dataclass
class FeatureMap:
    activations: np.ndarray  # [L, H, W]

    def __post_init__(self):
        a = np.asarray(self.activations, dtype=np.float64)
        if a.ndim != 3 or min(a.shape) < 1:
            raise DimensionError(f"feature map must be L x H x W with every dim >= 1, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("feature map contains non-finite values")
        self.activations = a

    @property
    def shape(self):
        return self.activations.shape


@dataclass
class CamWeights:
    weights: np.ndarray  # [N, L]; entry (k, l) weighs channel l for class k

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or min(w.shape) < 1:
            raise DimensionError(f"CAM weights must be N x L with N, L >= 1, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("CAM weights contain non-finite values")
        self.weights = w

    @property
    def n_classes(self):
        return self.weights.shape[0]


def channel_pool(fmap):
    return fmap.activations.sum(axis=(1, 2))


def _check_channels(fmap, cw):
    if fmap.shape[0] != cw.weights.shape[1]:
        raise DimensionError(f"feature map has {fmap.shape[0]} channels, CAM weights expect "
                             f"{cw.weights.shape[1]}")


def class_scores(fmap, cw):
    """``S_k = sum_l w[k, l] * F_l``."""
    _check_channels(fmap, cw)
    return cw.weights @ channel_pool(fmap)


def cam_map(fmap, cw, k):
    """``M_k(x, y) = sum_l w[k, l] * f_l(x, y)``."""
    _check_channels(fmap, cw)
    if not 0 <= k < cw.n_classes:
        raise IndexError(f"class index {k} outside [0, {cw.n_classes})")
    return np.tensordot(cw.weights[k], fmap.activations, axes=(0, 0))


def gated_features(fmap, cam):
    """Feature map scaled by the rectified CAM, broadcast across channels."""
    cam = np.asarray(cam, dtype=np.float64)
    if cam.shape != fmap.shape[1:]:
        raise DimensionError(f"CAM shape {cam.shape} does not match spatial dims {fmap.shape[1:]}")
    return fmap.activations * np.maximum(cam, 0.0)[None, :, :]


def select_class(scores):
    """Argmax with ties to the lowest index."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise DimensionError("no scores to select from")
    return int(np.argmax(scores))


@dataclass
class ActionHead:
    """Affine map + ReLU from flattened gated features to a ``dim``-vector."""
    w: np.ndarray  # [dim, L*H*W]
    b: np.ndarray  # [dim]

    @classmethod
    def init(cls, in_shape, dim, seed):
        n_in = int(np.prod(in_shape))
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, size=(dim, n_in)), np.zeros(dim))

    def __call__(self, gated):
        flat = np.asarray(gated, dtype=np.float64).reshape(-1)
        if flat.shape[0] != self.w.shape[1]:
            raise DimensionError(f"action head expects {self.w.shape[1]} inputs, got {flat.shape[0]}")
        return np.maximum(self.w @ flat + self.b, 0.0)


def action_feature_vector(fmap, cw, head, k="auto"):
    """Action-aware features for one frame.

    ``k="auto"`` gates with the top-scoring class; pass the ground-truth
    class when preparing training data.
    """
    if isinstance(k, str):
        if k != "auto":
            raise ValueError(f"class index must be an int or 'auto', got {k!r}")
        k = select_class(class_scores(fmap, cw))
    return head(gated_features(fmap, cam_map(fmap, cw, k)))


# --- .fmp files ------------------------------------------------------------

def fmp_bytes(fmap, cw):
    _check_channels(fmap, cw)
    L, H, W = fmap.shape
    N = cw.n_classes
    return (FMP_MAGIC + struct.pack("<4I", L, H, W, N)
            + np.ascontiguousarray(fmap.activations, dtype="<f4").tobytes()
            + np.ascontiguousarray(cw.weights, dtype="<f4").tobytes())


def save_fmp(path, fmap, cw):
    with open(path, "wb") as fh:
        fh.write(fmp_bytes(fmap, cw))


def read_fmp_header(buf):
    if len(buf) < 4:
        raise FormatError("truncated feature-map file: missing magic", offset=len(buf))
    if buf[:4] != FMP_MAGIC:
        raise FormatError(f"bad feature-map magic {bytes(buf[:4])!r}", offset=0)
    if len(buf) < 20:
        raise FormatError("truncated feature-map header", offset=len(buf))
    L, H, W, N = struct.unpack_from("<4I", buf, 4)
    return {"channels": L, "height": H, "width": W, "classes": N}


def fmp_from_bytes(buf):
    hdr = read_fmp_header(buf)
    L, H, W, N = hdr["channels"], hdr["height"], hdr["width"], hdr["classes"]
    off = 20
    n_act, n_w = L * H * W, N * L
    if len(buf) < off + 4 * n_act:
        raise FormatError(f"truncated activations: need {4 * n_act} bytes", offset=len(buf))
    act = np.frombuffer(buf, dtype="<f4", count=n_act, offset=off).reshape(L, H, W)
    off += 4 * n_act
    if len(buf) < off + 4 * n_w:
        raise FormatError(f"truncated CAM weights: need {4 * n_w} bytes", offset=len(buf))
    w = np.frombuffer(buf, dtype="<f4", count=n_w, offset=off).reshape(N, L)
    off += 4 * n_w
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", offset=off)
    try:
        return FeatureMap(act.astype(np.float64)), CamWeights(w.astype(np.float64))
    except (DimensionError, ValueError) as exc:
        raise FormatError(f"invalid feature-map payload: {exc}", offset=20) from None


def load_fmp(path):
    with open(path, "rb") as fh:
        return fmp_from_bytes(fh.read())
