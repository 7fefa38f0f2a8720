"""Train MS-LSTM on the default synthetic set until it memorises the training data."""

import argparse
import time

from mslstm import data, model
from mslstm.train import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--loss", default="plgl")
    ap.add_argument("--arch", default="multistage")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--save", help="optional checkpoint path")
    args = ap.parse_args()

    cfg = data.GenConfig(seed=args.seed)
    ds = data.generate(cfg)
    dims = model.ModelDims(cfg.d_ctx, cfg.d_act, cfg.n_classes, hidden=args.hidden)
    m = model.init_model(dims, args.arch, seed=args.seed, loss=args.loss)
    start = time.perf_counter()
    reached = []

    def log(s):
        if s.train_acc >= 0.99 and not reached:
            reached.append(s.epoch)
        if s.epoch % 10 == 0 or s.epoch == 1:
            print(f"epoch {s.epoch:4d}  loss {s.loss:.5f}  train_acc {s.train_acc:.4f}  "
                  f"{time.perf_counter() - start:6.1f}s", flush=True)

    trained, hist = train(m, ds, TrainConfig(epochs=args.epochs, loss=args.loss, seed=args.seed), on_epoch=log)
    print(f"final train accuracy {hist[-1].train_acc:.4f}; >= 99% first at epoch "
          f"{reached[0] if reached else 'never'}; {time.perf_counter() - start:.1f}s total")
    if args.save:
        model.save_checkpoint(trained, args.save)
        print(f"wrote {args.save}")


if __name__ == "__main__":
    main()
