"""Cross-modal advantage experiment: cascade vs unimodal baselines on the
synthetic xor task, where neither modality alone carries label information.

Run from the repo root:  python3 scripts/xor_advantage.py [--seeds 3]
"""

import argparse
import time

from ccmt import (
    CCMTConfig,
    Dataset,
    SyntheticSpec,
    TrainConfig,
    build_model,
    evaluate,
    gen_synthetic,
    train,
)
from ccmt.baselines import UnimodalMLPConfig, VotingEnsemble, build_unimodal_mlp
from ccmt.data import DatasetSplit
from ccmt.tokens import Modality


def make_xor_dataset(seed: int, train_n: int = 512, test_n: int = 256):
    spec = SyntheticSpec(
        samples=train_n + test_n,
        d=16,
        num_classes=2,
        task="xor",
        k_range=(6, 12),
        noise_std=0.05,
        seed=seed,
        cue_scale=1.0,
    )
    ds = gen_synthetic(spec)
    ids = [r.sample_id for r in ds.records]
    # Round-robin cell assignment makes a prefix/suffix cut label-balanced.
    split = DatasetSplit(train=tuple(ids[:train_n]), dev=(), test=tuple(ids[train_n:]), seed=seed)
    return ds, split


def ccmt_config(input_projection: bool = False) -> CCMTConfig:
    return CCMTConfig(
        num_classes=2,
        k=8,
        d=16,
        d_h=16,
        heads=2,
        l1=1,
        l2=1,
        d_ff=64,
        input_projection=input_projection,
    )


def run_ccmt(seed: int, epochs: int, lr: float, input_projection: bool = False) -> float:
    ds, split = make_xor_dataset(seed)
    model = build_model(ccmt_config(input_projection), seed)
    tcfg = TrainConfig(lr=lr, batch_size=32, epochs=epochs, seed=seed)
    model, _ = train(model, ds, split, tcfg)
    return evaluate(model, ds, split.test, seed=seed).accuracy


def run_unimodal(seed: int, epochs: int, lr: float):
    ds, split = make_xor_dataset(seed)
    accs = {}
    members = []
    for m in Modality:
        cfg = UnimodalMLPConfig(modality=m, width=16, num_classes=2, k=8, hidden=32)
        member = build_unimodal_mlp(cfg, seed + int(m))
        tcfg = TrainConfig(lr=lr, batch_size=32, epochs=epochs, seed=seed)
        member, _ = train(member, ds, split, tcfg)
        accs[m.name] = evaluate(member, ds, split.test, seed=seed).accuracy
        members.append(member)
    ensemble = VotingEnsemble(members=tuple(members))
    accs["majority_vote"] = evaluate(ensemble, ds, split.test, seed=seed).accuracy
    return accs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--input-projection", action="store_true")
    args = ap.parse_args()

    t0 = time.time()
    ccmt_accs = []
    for s in range(args.seeds):
        acc = run_ccmt(s, args.epochs, args.lr, args.input_projection)
        ccmt_accs.append(acc)
        print(f"cascade seed={s}: test acc {acc:.4f}  ({time.time() - t0:.0f}s)")
    print(f"cascade mean: {sum(ccmt_accs) / len(ccmt_accs):.4f}")

    for s in range(args.seeds):
        accs = run_unimodal(s, args.epochs, args.lr)
        print(f"unimodal seed={s}: " + "  ".join(f"{k}={v:.3f}" for k, v in accs.items()))
    print(f"total {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
