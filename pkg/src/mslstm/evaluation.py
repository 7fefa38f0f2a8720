"""Recognition accuracy, anticipation curves and architecture/loss sweeps."""

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numkernel as nk
from .data import select_dataset_frames
from .losses import LossKind
from .model import ArchVariant, Pooling, forward, init_model, pool_predictions
from .train import TrainConfig, check_compatible, train


@dataclass
class EvalReport:
    accuracy_avgpool: float
    accuracy_last: float
    pooling: str
    per_class_accuracy: list
    confusion: list          # rows: true class, columns: predicted class
    anticipation: list       # accuracy for prefix lengths t = 1..K
    n_samples: int
    config: dict = field(default_factory=dict)

    @property
    def accuracy(self):
        return self.accuracy_avgpool if self.pooling == Pooling.AVERAGE.value else self.accuracy_last

    def to_dict(self):
        d = asdict(self)
        d["accuracy"] = self.accuracy
        return d


def _all_predictions(m, ds, batch_size=256):
    """Per-frame stage-two probabilities ``[K, S, N]`` and labels ``[S]``."""
    preds, labels = [], []
    with nk.no_grad():
        for start in range(0, len(ds), batch_size):
            idx = range(start, min(start + batch_size, len(ds)))
            ctx, act, flow, lab = ds.batch(idx)
            _, pa = forward(m, ctx, act, flow)
            preds.append(pa.data)
            labels.append(lab)
    return np.concatenate(preds, axis=1), np.concatenate(labels)


def evaluate(m, ds, pooling=Pooling.AVERAGE, config=None):
    """Accuracy under both poolings, per-class accuracy and confusion for ``pooling``,
    and the anticipation curve (average pooling over each prefix)."""
    pooling = Pooling.parse(pooling)
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    check_compatible(m, ds)
    pred, labels = _all_predictions(m, ds)
    K, N = pred.shape[0], m.dims.n_classes
    by_avg = pool_predictions(pred, Pooling.AVERAGE)
    by_last = pool_predictions(pred, Pooling.LAST)
    chosen = by_avg if pooling is Pooling.AVERAGE else by_last
    confusion = np.zeros((N, N), dtype=np.int64)
    np.add.at(confusion, (labels, chosen), 1)
    counts = confusion.sum(axis=1)
    per_class = [float(confusion[k, k] / counts[k]) if counts[k] else float("nan") for k in range(N)]
    # prefix t uses exactly the rows a truncated forward pass would produce
    curve = [float(np.mean(pool_predictions(pred[:t], Pooling.AVERAGE) == labels)) for t in range(1, K + 1)]
    return EvalReport(
        accuracy_avgpool=float(np.mean(by_avg == labels)),
        accuracy_last=float(np.mean(by_last == labels)),
        pooling=pooling.value,
        per_class_accuracy=per_class,
        confusion=confusion.tolist(),
        anticipation=curve,
        n_samples=len(ds),
        config=dict(config or {}),
    )


def anticipation_csv(curve):
    buf = io.StringIO()
    buf.write("t,accuracy\n")
    for t, acc in enumerate(curve, start=1):
        buf.write(f"{t},{acc:.6f}\n")
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def write_report(report, out_dir):
    """Write ``report.json`` and ``anticipation.csv``; returns their paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        json_path = os.path.join(out_dir, "report.json")
        csv_path = os.path.join(out_dir, "anticipation.csv")
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(_json_safe(report.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(anticipation_csv(report.anticipation))
    except OSError as exc:
        raise OSError(f"cannot write report to {out_dir!r}: {exc}") from exc
    return json_path, csv_path


def read_anticipation_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["accuracy"]) for r in rows]


# --- ablation sweep --------------------------------------------------------

ARCH_LABELS = {
    ArchVariant.CONCAT: ("Concatenation", "LSTM"),
    ArchVariant.SWAPPED: ("Swapped", "LSTM"),
    ArchVariant.PARALLEL: ("Parallel", "2 Parallel LSTMs"),
    ArchVariant.MULTISTAGE: ("Ours", "MS-LSTM"),
}


def row_label(arch, kind):
    order, learner = ARCH_LABELS[ArchVariant.parse(arch)]
    return f"{order} | {learner} ({LossKind.parse(kind).label})"


def run_cell(ds, dims, arch, kind, cfg, model_seed=None):
    """Train one (architecture, loss) cell from a fresh seeded model and evaluate it on ``ds``."""
    cell_cfg = replace(cfg, loss=LossKind.parse(kind))
    seed = cfg.seed if model_seed is None else model_seed
    m = init_model(dims, arch, seed=seed, loss=kind)
    trained, history = train(m, ds, cell_cfg)
    eval_ds = ds
    if cfg.frames:
        eval_ds = select_dataset_frames(ds, cfg.frames, cfg.frame_selection, cfg.seed)
    rep = evaluate(trained, eval_ds)
    return {
        "label": row_label(arch, kind),
        "arch": ArchVariant.parse(arch).value,
        "loss": LossKind.parse(kind).value,
        "accuracy_avgpool": rep.accuracy_avgpool,
        "accuracy_last": rep.accuracy_last,
        "final_loss": history[-1].loss if history else float("nan"),
    }


def ablation_sweep(ds, dims, cfg=None, archs=None, kinds=None, on_row=None):
    """Every architecture x loss combination, each trained from the same seed."""
    cfg = cfg or TrainConfig()
    archs = [ArchVariant.parse(a) for a in (archs or [ArchVariant.CONCAT, ArchVariant.SWAPPED,
                                                      ArchVariant.PARALLEL, ArchVariant.MULTISTAGE])]
    kinds = [LossKind.parse(k) for k in (kinds or list(LossKind))]
    rows = []
    for arch in archs:
        for kind in kinds:
            row = run_cell(ds, dims, arch, kind, cfg)
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def ablation_table(rows):
    """Plain-text table plus the architectures ranked by mean average-pooled accuracy."""
    width = max(len(r["label"]) for r in rows)
    lines = [f"{'Setup':<{width}}  AvgPool   Last"]
    for r in rows:
        lines.append(f"{r['label']:<{width}}  {r['accuracy_avgpool']:.4f}  {r['accuracy_last']:.4f}")
    means = {}
    for r in rows:
        means.setdefault(r["arch"], []).append(r["accuracy_avgpool"])
    ranked = sorted(means, key=lambda a: -np.mean(means[a]))
    lines.append("ordering by mean AvgPool accuracy: " + " > ".join(ranked))
    return "\n".join(lines)


def ablation_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "arch", "loss", "accuracy_avgpool", "accuracy_last", "final_loss"])
    for r in rows:
        w.writerow([r["label"], r["arch"], r["loss"], f"{r['accuracy_avgpool']:.6f}",
                    f"{r['accuracy_last']:.6f}", f"{r['final_loss']:.6f}"])
    return buf.getvalue()
