"""Memorization sanity run: a scaled-down default shape must overfit a tiny
separable dataset. Prints per-stage train accuracy.

Run from the repo root:  python3 scripts/overfit_check.py
"""

import argparse
import time

from ccmt import (
    CCMTConfig,
    SyntheticSpec,
    TrainConfig,
    build_model,
    evaluate,
    gen_synthetic,
    train,
)
from ccmt.data import DatasetSplit


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=120)
    ap.add_argument("--stage", type=int, default=20, help="epochs between accuracy prints")
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    ds = gen_synthetic(
        SyntheticSpec(
            samples=args.samples, d=32, num_classes=4, task="separable",
            k_range=(12, 24), noise_std=0.25, seed=args.seed,
        )
    )
    ids = tuple(r.sample_id for r in ds.records)
    split = DatasetSplit(train=ids, dev=(), test=(), seed=0)
    cfg = CCMTConfig(num_classes=4, k=16, d=32, d_h=32, heads=4, l1=2, l2=2)
    model = build_model(cfg, 0)

    t0 = time.time()
    done = 0
    while done < args.epochs:
        step = min(args.stage, args.epochs - done)
        tcfg = TrainConfig(lr=args.lr, batch_size=32, epochs=step, seed=done)
        model, hist = train(model, ds, split, tcfg)
        done += step
        acc = evaluate(model, ds, ids, seed=0).accuracy
        print(
            f"epoch {done:>3}: loss {hist[-1]['train_loss']:.4f}  "
            f"train acc {acc:.4f}  ({time.time() - t0:.0f}s)"
        )
        if acc >= 0.999:
            break


if __name__ == "__main__":
    main()
