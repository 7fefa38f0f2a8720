"""Architecture x loss sweep on the synthetic set; prints the table and the observed ordering."""

import argparse
import time

from mslstm import data, evaluation, model
from mslstm.train import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--frames", type=int, default=0, help="train on K' frames per video; 0 keeps all")
    ap.add_argument("--csv", help="optional output path")
    args = ap.parse_args()

    cfg = data.GenConfig(seed=args.seed)
    ds = data.generate(cfg)
    dims = model.ModelDims(cfg.d_ctx, cfg.d_act, cfg.n_classes, hidden=args.hidden)
    start = time.perf_counter()
    rows = evaluation.ablation_sweep(
        ds, dims, TrainConfig(epochs=args.epochs, seed=args.seed, frames=args.frames),
        on_row=lambda r: print(f"{r['label']:<36} {r['accuracy_avgpool']:.4f}  "
                               f"({time.perf_counter() - start:.0f}s)", flush=True))
    print()
    print(evaluation.ablation_table(rows))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(evaluation.ablation_csv(rows))
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
