"""Anticipation curves: accuracy from the first t frames, for each loss, on held-out synthetic data."""

import argparse

from mslstm import data, evaluation, model
from mslstm.losses import LossKind
from mslstm.train import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--arch", default="multistage")
    ap.add_argument("--csv", help="optional output path (one column per loss)")
    args = ap.parse_args()

    # one draw so both splits share class prototypes; labels are round-robin, so splits stay balanced
    train_cfg = data.GenConfig(seed=args.seed, n_samples=384)
    full = data.generate(train_cfg)
    split = lambda lo, hi: data.Dataset(full.n_classes, full.k, full.d_ctx, full.d_act, full.d_flow,
                                        full.samples[lo:hi])
    ds_train, ds_test = split(0, 128), split(128, 384)
    dims = model.ModelDims(train_cfg.d_ctx, train_cfg.d_act, train_cfg.n_classes, hidden=args.hidden)

    curves = {}
    for kind in LossKind:
        m = model.init_model(dims, args.arch, seed=args.seed, loss=kind)
        trained, _ = train(m, ds_train, TrainConfig(epochs=args.epochs, loss=kind, seed=args.seed))
        curves[kind.label] = evaluation.evaluate(trained, ds_test).anticipation
        print(f"{kind.label:5s} " + " ".join(f"{a:.2f}" for a in curves[kind.label]), flush=True)

    lines = ["t," + ",".join(curves)]
    for t in range(train_cfg.k):
        lines.append(f"{t + 1}," + ",".join(f"{c[t]:.6f}" for c in curves.values()))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {args.csv}")
    else:
        print("\n".join(lines))


if __name__ == "__main__":
    main()
