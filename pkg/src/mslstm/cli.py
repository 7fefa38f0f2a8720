"""Command-line entry point: ``mslstm <subcommand> ...``.

Exit codes: 0 success, 1 runtime or check failure, 2 usage error.
Every subcommand accepts ``--config FILE`` of ``key=value`` lines whose keys
are that subcommand's long flag names; explicit flags override the file.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import cam, data, evaluation, gradcheck
from .errors import ConfigError, DimensionError, FormatError
from .losses import LossKind
from .model import (CHECKPOINT_MAGIC, DEFAULT_HIDDEN, ArchVariant, ModelDims, Pooling,
                    init_model, load_checkpoint, read_checkpoint_header, save_checkpoint)
from .train import TrainConfig, train


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


# --- argparse helpers ------------------------------------------------------

def _typed(cast, check, desc):
    def conv(text):
        try:
            v = cast(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {desc}, got {text!r}") from None
        if not check(v):
            raise argparse.ArgumentTypeError(f"expected {desc}, got {text!r}")
        return v
    return conv


pos_int = _typed(int, lambda v: v >= 1, "an integer >= 1")
nonneg_int = _typed(int, lambda v: v >= 0, "an integer >= 0")
nonneg_float = _typed(float, lambda v: v >= 0 and math.isfinite(v), "a finite number >= 0")
pos_float = _typed(float, lambda v: v > 0 and math.isfinite(v), "a finite number > 0")
unit_float = _typed(float, lambda v: 0 <= v <= 1, "a number in [0, 1]")
momentum_float = _typed(float, lambda v: 0 <= v < 1, "a number in [0, 1)")


def read_config_file(path):
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _add_train_flags(p):
    p.add_argument("--arch", choices=[a.value for a in ArchVariant], default="multistage")
    p.add_argument("--loss", choices=[k.value for k in LossKind], default="plgl")
    p.add_argument("--hidden", type=pos_int, default=DEFAULT_HIDDEN)
    p.add_argument("--epochs", type=nonneg_int, default=10)
    p.add_argument("--seed", type=nonneg_int, default=0)
    p.add_argument("--lr", dest="learning_rate", type=pos_float, default=0.01)
    p.add_argument("--momentum", type=momentum_float, default=0.9)
    p.add_argument("--batch-size", type=pos_int, default=32)
    p.add_argument("--weight-decay", type=nonneg_float, default=0.0)
    p.add_argument("--clip-norm", type=nonneg_float, default=5.0, help="0 disables clipping")
    p.add_argument("--frame-selection", choices=["first", "random"], default="first")
    p.add_argument("--frames", type=nonneg_int, default=0, help="frames per sample; 0 keeps all")
    p.add_argument("--threads", type=pos_int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(prog="mslstm", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="generate a synthetic .fsd dataset")
    p.add_argument("--classes", type=pos_int, default=8)
    p.add_argument("--samples", type=nonneg_int, default=128)
    p.add_argument("--frames", type=pos_int, default=20)
    p.add_argument("--d-ctx", type=pos_int, default=16)
    p.add_argument("--d-act", type=pos_int, default=16)
    p.add_argument("--d-flow", type=nonneg_int, default=0)
    p.add_argument("--noise-sigma", type=nonneg_float, default=0.3)
    p.add_argument("--ctx-reliability", type=unit_float, default=0.7)
    p.add_argument("--ambiguity-horizon", type=nonneg_int, default=10)
    p.add_argument("--seed", type=nonneg_int, default=0)
    p.add_argument("--out", required=True)

    p = subs.add_parser("train", help="train a model and write a .msl checkpoint")
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    p.add_argument("--out", required=True)

    p = subs.add_parser("eval", help="evaluate a checkpoint; writes report.json and anticipation.csv")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pooling", choices=["avgpool", "last"], default="avgpool")
    p.add_argument("--out", required=True, help="output directory")

    p = subs.add_parser("anticipate", help="accuracy from the first t frames, t = 1..K")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="CSV path; stdout when omitted")

    p = subs.add_parser("cam", help="class scores, CAM and gated features from an .fmp file")
    p.add_argument("--input", required=True)
    p.add_argument("--class", dest="cls", default="auto", help="class index or 'auto'")
    p.add_argument("--action-dim", type=nonneg_int, default=0,
                   help="also emit an action feature vector of this size (0 = skip)")
    p.add_argument("--seed", type=nonneg_int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = subs.add_parser("ablate", help="train and evaluate every architecture x loss pair")
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    p.add_argument("--out", help="CSV path for the result table")

    p = subs.add_parser("gradcheck", help="finite-difference check of model gradients")
    p.add_argument("--seed", type=nonneg_int, default=0)
    p.add_argument("--arch", choices=[a.value for a in ArchVariant], default="multistage")
    p.add_argument("--tolerance", type=pos_float, default=gradcheck.TOLERANCE)

    p = subs.add_parser("inspect", help="print header metadata of .fsd/.msl/.fmp files")
    p.add_argument("path")

    for sp in subs.choices.values():
        sp.add_argument("--config", help="key=value file; flags override")
    return parser, subs.choices


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(sub, path):
    """Install values from a config file as the subparser's defaults."""
    try:
        values = read_config_file(path)
    except (OSError, ConfigError) as exc:
        sub.error(f"--config: {exc}")
    actions = [a for a in sub._actions if a.dest not in ("help", "config")]
    by_key = {}
    for a in actions:
        by_key[a.dest] = a
        for opt in a.option_strings:
            by_key[opt.lstrip("-").replace("-", "_")] = a
    defaults = {}
    for key, value in values.items():
        action = by_key.get(key)
        if action is None:
            sub.error(f"--config: unknown key {key!r}")
        if action.type is not None:
            try:
                value = action.type(value)
            except argparse.ArgumentTypeError as exc:
                sub.error(f"--config: {key}: {exc}")
        if action.choices is not None and value not in action.choices:
            sub.error(f"--config: {key}: invalid choice {value!r}")
        action.required = False
        defaults[action.dest] = value
    sub.set_defaults(**defaults)


def parse_args(argv):
    parser, subparsers = build_parser()
    argv = list(argv)
    cmd = argv[0] if argv and argv[0] in subparsers else None
    path = _config_path(argv)
    if cmd is not None and path is not None:
        _apply_config(subparsers[cmd], path)
    args = parser.parse_args(argv)
    if args.command == "gen-data" and args.ambiguity_horizon > args.frames:
        subparsers["gen-data"].error(f"argument --ambiguity-horizon: {args.ambiguity_horizon} exceeds "
                                     f"--frames {args.frames}")
    return args


# --- subcommands -----------------------------------------------------------

def _load_dataset(path):
    if not os.path.exists(path):
        raise CliError(f"data file not found: {path}")
    return data.load(path)


def _load_model(path):
    if not os.path.exists(path):
        raise CliError(f"model file not found: {path}")
    return load_checkpoint(path)


def _train_config(args):
    return TrainConfig(learning_rate=args.learning_rate, momentum=args.momentum,
                       batch_size=args.batch_size, epochs=args.epochs,
                       weight_decay=args.weight_decay, loss=args.loss, seed=args.seed,
                       frame_selection=args.frame_selection, frames=args.frames,
                       clip_norm=args.clip_norm, threads=args.threads)


def _dims_for(ds, hidden):
    return ModelDims(d_ctx=ds.d_ctx, d_act=ds.d_act, n_classes=ds.n_classes,
                     hidden=hidden, d_flow=ds.d_flow)


def cmd_gen_data(args):
    cfg = data.GenConfig(n_classes=args.classes, n_samples=args.samples, k=args.frames,
                         d_ctx=args.d_ctx, d_act=args.d_act, d_flow=args.d_flow,
                         noise_sigma=args.noise_sigma, ctx_reliability=args.ctx_reliability,
                         ambiguity_horizon=args.ambiguity_horizon, seed=args.seed)
    ds = data.generate(cfg)
    data.save(ds, args.out)
    print(f"wrote {args.out}: S={len(ds)} N={ds.n_classes} K={ds.k} D_c={ds.d_ctx} "
          f"D_a={ds.d_act} D_f={ds.d_flow} seed={cfg.seed}")


def cmd_train(args):
    ds = _load_dataset(args.data)
    cfg = _train_config(args)
    m = init_model(_dims_for(ds, args.hidden), args.arch, seed=args.seed, loss=cfg.loss)
    m.meta = {"epochs": cfg.epochs, "learning_rate": cfg.learning_rate, "momentum": cfg.momentum,
              "batch_size": cfg.batch_size, "frames": cfg.frames,
              "frame_selection": cfg.frame_selection.value, "frame_seed": cfg.seed}

    def log(s):
        print(f"epoch {s.epoch:4d}  loss {s.loss:.6f}  train_acc {s.train_acc:.4f}", flush=True)

    trained, history = train(m, ds, cfg, on_epoch=log)
    if history:
        trained.meta["final_train_acc"] = history[-1].train_acc
    save_checkpoint(trained, args.out)
    print(f"wrote {args.out}")


def _eval_dataset(m, ds):
    frames = int(m.meta.get("frames", 0) or 0)
    if frames:
        strategy = m.meta.get("frame_selection", "first")
        return data.select_dataset_frames(ds, frames, strategy, int(m.meta.get("frame_seed", m.seed)))
    return ds


def cmd_eval(args):
    m = _load_model(args.model)
    ds = _eval_dataset(m, _load_dataset(args.data))
    rep = evaluation.evaluate(m, ds, args.pooling,
                              config={"model": args.model, "data": args.data, "pooling": args.pooling,
                                      "arch": m.arch.value, "loss": m.loss.value, "hidden": m.dims.hidden})
    paths = evaluation.write_report(rep, args.out)
    print(f"accuracy avgpool {rep.accuracy_avgpool:.4f}  last {rep.accuracy_last:.4f}")
    print("wrote " + ", ".join(paths))


def cmd_anticipate(args):
    m = _load_model(args.model)
    ds = _eval_dataset(m, _load_dataset(args.data))
    rep = evaluation.evaluate(m, ds)
    text = evaluation.anticipation_csv(rep.anticipation)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)


def cmd_cam(args):
    if not os.path.exists(args.input):
        raise CliError(f"feature-map file not found: {args.input}")
    fmap, cw = cam.load_fmp(args.input)
    scores = cam.class_scores(fmap, cw)
    if args.cls == "auto":
        k = cam.select_class(scores)
    else:
        try:
            k = int(args.cls)
        except ValueError:
            raise CliError(f"--class must be an integer or 'auto', got {args.cls!r}") from None
    cmap = cam.cam_map(fmap, cw, k)
    gated = cam.gated_features(fmap, cmap)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "scores.csv"), "w", encoding="utf-8") as fh:
        fh.write("class,score\n")
        for i, s in enumerate(scores):
            fh.write(f"{i},{float(s)!r}\n")
    np.savetxt(os.path.join(args.out, "cam.csv"), cmap, delimiter=",", fmt="%.17g")
    np.save(os.path.join(args.out, "gated.npy"), gated)
    if args.action_dim:
        head = cam.ActionHead.init(fmap.shape, args.action_dim, args.seed)
        np.save(os.path.join(args.out, "action_features.npy"), cam.action_feature_vector(fmap, cw, head, k))
    print(f"class {k} (score {scores[k]:.6g}); wrote scores.csv, cam.csv, gated.npy to {args.out}")


def cmd_ablate(args):
    ds = _load_dataset(args.data)
    cfg = _train_config(args)
    dims = _dims_for(ds, args.hidden)

    def show(row):
        print(f"{row['label']:<40} avgpool {row['accuracy_avgpool']:.4f}  last {row['accuracy_last']:.4f}",
              flush=True)

    rows = evaluation.ablation_sweep(ds, dims, cfg, on_row=show)
    print(evaluation.ablation_table(rows))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(evaluation.ablation_csv(rows))
        print(f"wrote {args.out}")


def cmd_gradcheck(args):
    results, elapsed = gradcheck.model_gradcheck(seed=args.seed, arch=args.arch)
    worst = max(results.values())
    for kind, err in results.items():
        print(f"{kind:5s} max rel err {err:.3e}")
    print(f"max rel err {worst:.3e} (tolerance {args.tolerance:g}, {elapsed:.1f}s)")
    if not worst <= args.tolerance:
        raise CliError("gradient check failed")


def describe_file(path):
    """Header metadata of a .fsd, .msl or .fmp file, dispatched on the magic bytes."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:4]
    if magic == data.DATASET_MAGIC:
        hdr, _ = data.read_dataset_header(buf)
        data.dataset_from_bytes(buf)
        return {"format": "fsd", **hdr}
    if magic == CHECKPOINT_MAGIC:
        hdr, _ = read_checkpoint_header(buf)
        m = load_checkpoint(path)
        return {"format": "msl", **hdr, "n_params": m.n_params()}
    if magic == cam.FMP_MAGIC:
        hdr = cam.read_fmp_header(buf)
        cam.fmp_from_bytes(buf)
        return {"format": "fmp", **hdr}
    raise FormatError(f"unrecognised magic {bytes(magic)!r}", offset=0)


def cmd_inspect(args):
    if not os.path.exists(args.path):
        raise CliError(f"file not found: {args.path}")
    print(json.dumps(describe_file(args.path), indent=2, sort_keys=True))


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "anticipate": cmd_anticipate,
    "cam": cmd_cam, "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "inspect": cmd_inspect,
}


def main(argv=None):
    args = parse_args(sys.argv[1:] if argv is None else argv)
    try:
        COMMANDS[args.command](args)
    except (CliError, FormatError, ConfigError, DimensionError, IndexError, ValueError, OSError) as exc:
        print(f"mslstm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
