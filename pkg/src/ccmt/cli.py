"""Command-line entry point: synth, train, eval, gradcheck, baseline,
export-cls, validate.

Exit codes: 0 success, 1 validation/usage error, 2 I/O or parse error,
3 divergence or failed gradient check. Flag precedence is flags > config
file (--config, JSON) > defaults; every file-producing run writes a
manifest (<out>.manifest.json) recording the resolved configuration and
seeds. CCMT_SEED in the environment overrides only the default of --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time

from .attention import ResidualMode
from .baselines import (
    FusionKind,
    MLPFusionConfig,
    UnimodalMLPConfig,
    VanillaFusionConfig,
    VotingEnsemble,
    build_mlp_fusion,
    build_unimodal_mlp,
    build_vanilla_fusion,
)
from .data import (
    DATASET_VERSION,
    Dataset,
    SyntheticSpec,
    export_class_embeddings,
    gen_synthetic,
    read_dataset,
    split_dataset,
    write_dataset,
)
from .errors import (
    CCMTError,
    DataFormatError,
    DivergenceError,
    ModelFormatError,
    ValidationError,
)
from .model import MODEL_VERSION, CCMTConfig, build_model, load_model, save_model
from .tokens import Modality, assemble
from .train import TrainConfig, evaluate, grad_check_model, train, write_history


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _default_seed() -> int:
    try:
        return int(os.environ.get("CCMT_SEED", "0"))
    except ValueError:
        return 0


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except (OSError, ValueError) as e:
        raise ValidationError(f"cannot read config file {path}: {e}") from e
    if not isinstance(cfg, dict):
        raise ValidationError("config file must hold a JSON object")
    return cfg


def _resolve(args, cfgfile: dict, key: str, flag_value, default):
    """flags > config file > default."""
    if flag_value is not None:
        return flag_value
    if key in cfgfile:
        return cfgfile[key]
    return default


def _write_manifest(out_path, args_ns, resolved: dict, seeds: dict, artifacts: dict, t0: float):
    manifest = {
        "command": sys.argv if args_ns is None else ["ccmt"] + args_ns._raw_argv,
        "resolved_config": resolved,
        "seeds": seeds,
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "wall_clock_sec": round(time.time() - t0, 3),
        "format_versions": {"model": MODEL_VERSION, "dataset": DATASET_VERSION},
    }
    path = str(out_path) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _add_model_flags(p):
    p.add_argument("--k", type=int, default=None, help="tokens per modality")
    p.add_argument("--d", type=int, default=None, help="token width")
    p.add_argument("--heads", type=int, default=None, help="attention heads per block")
    p.add_argument("--head-dim", type=int, default=None, help="per-head width d_h")
    p.add_argument("--l1", type=int, default=None, help="text-fusion stack depth")
    p.add_argument("--l2", type=int, default=None, help="audio-fusion stack depth")
    p.add_argument("--residual", choices=["literal", "kv", "query"], default=None,
                   help="block residual arrangement")
    p.add_argument("--input-projection", action="store_true", default=None,
                   help="enable the ablated per-modality input projection")
    p.add_argument("--pair-mode", choices=["text_audio", "text_text"], default=None,
                   help="two-modality routing instead of the full cascade")
    p.add_argument("--activation", choices=["gelu", "relu"], default=None)
    p.add_argument("--mlp-hidden", type=int, default=None, help="head hidden width")
    p.add_argument("--d-ff", type=int, default=None, help="feed-forward hidden width")


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--metric", choices=["uar", "acc", "f1"], default=None,
                   help="checkpoint-selection metric")
    p.add_argument("--repeats", type=int, default=None,
                   help="independent training runs (mean/std reported)")
    p.add_argument("--eval-every", type=int, default=None)


def _add_split_flags(p):
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--dev-frac", type=float, default=0.15)
    p.add_argument("--split-seed", type=int, default=None,
                   help="defaults to --seed")


def _build_parser() -> _Parser:
    parser = _Parser(prog="ccmt", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="cmd", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic CCMTEMB dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=["separable", "xor"], default="separable")
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--k-min", type=int, default=8)
    p.add_argument("--k-max", type=int, default=24)
    p.add_argument("--variants", type=int, default=1)
    p.add_argument("--cue-scale", type=float, default=1.0)
    p.add_argument("--jsonl", action="store_true", help="write the JSON-lines debug form")

    p = sub.add_parser("validate", help="check a CCMTEMB file")
    p.add_argument("--data", required=True)
    p.add_argument("--jsonl", action="store_true")

    p = sub.add_parser("train", help="train the cascaded model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    _add_model_flags(p)
    _add_train_flags(p)
    _add_split_flags(p)

    p = sub.add_parser("eval", help="evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "dev", "test", "all"], default="test")
    p.add_argument("--seed", type=int, default=_default_seed(), help="token-assembly seed")
    p.add_argument("--out", default=None, help="optional report JSON path")
    _add_split_flags(p)

    p = sub.add_parser("gradcheck", help="verify gradients on a tiny model")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--init-std", type=float, default=0.4,
                   help="weight scale for the probe model (larger than the "
                        "training init so every gradient path is resolvable "
                        "by central differences)")
    _add_model_flags(p)

    p = sub.add_parser("baseline", help="train and evaluate a fusion baseline")
    p.add_argument("--fusion", choices=[k.value for k in FusionKind], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="optional report JSON path")
    p.add_argument("--depth", type=int, default=None, help="vanilla transformer depth")
    _add_model_flags(p)
    _add_train_flags(p)
    _add_split_flags(p)

    p = sub.add_parser("export-cls", help="export final class-token embeddings as TSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=_default_seed())

    return parser


def _resolve_ccmt_config(args, cfgfile: dict, header) -> CCMTConfig:
    d = _resolve(args, cfgfile, "d", args.d, 512)
    widths = tuple(header.widths)
    return CCMTConfig(
        num_classes=header.num_classes,
        k=_resolve(args, cfgfile, "k", args.k, 100),
        d=d,
        d_h=_resolve(args, cfgfile, "d_h", args.head_dim, 512),
        heads=_resolve(args, cfgfile, "heads", args.heads, 8),
        l1=_resolve(args, cfgfile, "l1", args.l1, 8),
        l2=_resolve(args, cfgfile, "l2", args.l2, 8),
        d_ff=_resolve(args, cfgfile, "d_ff", args.d_ff, None),
        mlp_hidden=_resolve(args, cfgfile, "mlp_hidden", args.mlp_hidden, None),
        residual_mode=ResidualMode(_resolve(args, cfgfile, "residual_mode", args.residual, "kv")),
        input_projection=bool(
            _resolve(args, cfgfile, "input_projection", args.input_projection, False)
        ),
        activation=_resolve(args, cfgfile, "activation", args.activation, "gelu"),
        pair_mode=_resolve(args, cfgfile, "pair_mode", args.pair_mode, None),
        modality_widths=None if all(w == d for w in widths) else widths,
    )


def _resolve_train_config(args, cfgfile: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        lr=_resolve(args, cfgfile, "lr", args.lr, 1e-4),
        batch_size=_resolve(args, cfgfile, "batch_size", args.batch, 32),
        epochs=_resolve(args, cfgfile, "epochs", args.epochs, 30),
        seed=seed,
        eval_every=_resolve(args, cfgfile, "eval_every", args.eval_every, 1),
        early_metric=_resolve(args, cfgfile, "early_metric", args.metric, "uar"),
    )


def _resolve_seed(args, cfgfile: dict) -> int:
    return int(_resolve(args, cfgfile, "seed", getattr(args, "seed", None), _default_seed()))


def _load_dataset(path, jsonl=False) -> Dataset:
    header, records = read_dataset(path, jsonl=jsonl)
    return Dataset(header=header, records=records)


def _split_fractions(args):
    rest = 1.0 - args.train_frac - args.dev_frac
    if rest < -1e-9:
        raise ValidationError(
            f"--train-frac {args.train_frac} + --dev-frac {args.dev_frac} exceed 1"
        )
    return (args.train_frac, args.dev_frac, max(rest, 0.0))


def _cmd_synth(args) -> int:
    t0 = time.time()
    spec = SyntheticSpec(
        samples=args.samples,
        d=args.d,
        num_classes=args.num_classes,
        task=args.task,
        k_range=(args.k_min, args.k_max),
        noise_std=args.noise_std,
        seed=args.seed,
        variants=args.variants,
        cue_scale=args.cue_scale,
    )
    ds = gen_synthetic(spec)
    write_dataset(ds.records, ds.header, args.out, jsonl=args.jsonl)
    _write_manifest(
        args.out,
        args,
        {"synthetic": vars(spec) | {"k_range": [list(p) for p in spec.k_range]}},
        {"seed": args.seed},
        {"dataset": args.out},
        t0,
    )
    print(f"wrote {spec.samples} samples ({spec.task}, d={spec.d}) to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    header, records = read_dataset(args.data, jsonl=args.jsonl)
    n_variants = sum(
        len(rec.modalities[m]) for rec in records for m in Modality
    )
    print(
        f"{args.data}: OK — {header.sample_count} samples, {header.num_classes} classes, "
        f"widths {header.widths}, {n_variants} variant matrices"
    )
    return 0


def _cmd_train(args) -> int:
    t0 = time.time()
    cfgfile = _load_config_file(args.config)
    seed = _resolve_seed(args, cfgfile)
    dataset = _load_dataset(args.data)
    model_cfg = _resolve_ccmt_config(args, cfgfile, dataset.header)
    split_seed = args.split_seed if args.split_seed is not None else seed
    fracs = _split_fractions(args)
    splits = split_dataset([r.sample_id for r in dataset.records], fracs, split_seed)
    repeats = int(_resolve(args, cfgfile, "repeats", args.repeats, 1))
    if repeats < 1:
        raise ValidationError("--repeats must be >= 1")

    runs = []
    for rep in range(repeats):
        tcfg = _resolve_train_config(args, cfgfile, seed + rep)
        model = build_model(model_cfg, seed + rep)
        best, history = train(model, dataset, splits, tcfg)
        dev_entries = [h["dev"] for h in history if h["dev"] is not None]
        final = dev_entries[-1][{"uar": "uar", "acc": "accuracy", "f1": "macro_f1"}[tcfg.early_metric]] if dev_entries else None
        runs.append({"model": best, "history": history, "dev_metric": final, "seed": seed + rep})

    scored = [r for r in runs if r["dev_metric"] is not None]
    chosen = max(scored, key=lambda r: r["dev_metric"]) if scored else runs[0]
    save_model(chosen["model"], args.out)
    hist_path = str(args.out) + ".history.jsonl"
    write_history(chosen["history"], hist_path)
    seeds = {"seed": seed, "split_seed": split_seed, "run_seeds": [r["seed"] for r in runs]}
    base_tcfg = _resolve_train_config(args, cfgfile, seed)
    resolved = {
        "model": model_cfg.to_dict(),
        "train": {
            "lr": base_tcfg.lr,
            "batch_size": base_tcfg.batch_size,
            "epochs": base_tcfg.epochs,
            "early_metric": base_tcfg.early_metric,
            "eval_every": base_tcfg.eval_every,
            "repeats": repeats,
        },
        "splits": {"fractions": list(fracs), "seed": split_seed},
    }
    _write_manifest(args.out, args, resolved, seeds, {"model": args.out, "history": hist_path}, t0)
    if scored:
        vals = [r["dev_metric"] for r in scored]
        mean = statistics.mean(vals)
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        print(f"dev metric over {len(vals)} run(s): {mean:.4f} ± {std:.4f}")
    print(f"saved model to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    t0 = time.time()
    model = load_model(args.model)
    dataset = _load_dataset(args.data)
    split_seed = args.split_seed if args.split_seed is not None else 0
    if args.split == "all":
        ids = [r.sample_id for r in dataset.records]
    else:
        fracs = _split_fractions(args)
        splits = split_dataset([r.sample_id for r in dataset.records], fracs, split_seed)
        ids = splits.subset(args.split)
    report = evaluate(model, dataset, ids, seed=args.seed)
    print(report.to_text())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(report.to_json() + "\n")
        _write_manifest(
            args.out,
            args,
            {"split": args.split, "split_seed": split_seed},
            {"seed": args.seed},
            {"report": args.out, "model": args.model, "data": args.data},
            t0,
        )
    return 0


def _cmd_gradcheck(args) -> int:
    cfgfile = _load_config_file(args.config)
    seed = _resolve_seed(args, cfgfile)
    k = _resolve(args, cfgfile, "k", args.k, 4)
    d = _resolve(args, cfgfile, "d", args.d, 8)
    cfg = CCMTConfig(
        num_classes=args.num_classes,
        k=k,
        d=d,
        d_h=_resolve(args, cfgfile, "d_h", args.head_dim, 8),
        heads=_resolve(args, cfgfile, "heads", args.heads, 2),
        l1=_resolve(args, cfgfile, "l1", args.l1, 1),
        l2=_resolve(args, cfgfile, "l2", args.l2, 1),
        residual_mode=ResidualMode(_resolve(args, cfgfile, "residual_mode", args.residual, "kv")),
        input_projection=bool(
            _resolve(args, cfgfile, "input_projection", args.input_projection, False)
        ),
        activation=_resolve(args, cfgfile, "activation", args.activation, "gelu"),
        pair_mode=_resolve(args, cfgfile, "pair_mode", args.pair_mode, None),
    )
    model = build_model(cfg, seed, init_std=args.init_std)
    spec = SyntheticSpec(
        samples=1, d=d, num_classes=args.num_classes, task="separable",
        k_range=(max(2, k - 1), k + 2), noise_std=0.5, seed=seed,
    )
    ds = gen_synthetic(spec)
    sample = assemble(ds.records[0], cfg, seed, eval_mode=True)
    report = grad_check_model(model, sample, tolerance=args.tolerance, h=args.fd_step)
    print(report.summary())
    return 0 if report.passed else 3


def _baseline_model(args, cfgfile, dataset, seed):
    header = dataset.header
    kind = FusionKind(args.fusion)
    k = _resolve(args, cfgfile, "k", args.k, 16)
    if kind == FusionKind.MAJORITY_VOTE:
        members = []
        for m in Modality:
            mc = UnimodalMLPConfig(
                modality=m, width=header.widths[int(m)], num_classes=header.num_classes, k=k
            )
            members.append(build_unimodal_mlp(mc, seed + int(m)))
        return members
    if kind == FusionKind.MLP_FUSION:
        mc = MLPFusionConfig(
            widths=tuple(header.widths), num_classes=header.num_classes, k=k,
            hidden=_resolve(args, cfgfile, "mlp_hidden", args.mlp_hidden, None),
        )
        return build_mlp_fusion(mc, seed)
    d = _resolve(args, cfgfile, "d", args.d, header.widths[0])
    if any(w != d for w in header.widths):
        raise ValidationError(
            f"vanilla transformer fusion needs equal modality widths == d, got {header.widths}"
        )
    vc = VanillaFusionConfig(
        num_classes=header.num_classes,
        k=k,
        d=d,
        d_h=_resolve(args, cfgfile, "d_h", args.head_dim, d),
        heads=_resolve(args, cfgfile, "heads", args.heads, 8),
        depth=_resolve(args, cfgfile, "depth", args.depth, 8),
        d_ff=_resolve(args, cfgfile, "d_ff", args.d_ff, None),
        mlp_hidden=_resolve(args, cfgfile, "mlp_hidden", args.mlp_hidden, None),
        activation=_resolve(args, cfgfile, "activation", args.activation, "gelu"),
    )
    return build_vanilla_fusion(vc, seed)


def _cmd_baseline(args) -> int:
    t0 = time.time()
    cfgfile = _load_config_file(args.config)
    seed = _resolve_seed(args, cfgfile)
    dataset = _load_dataset(args.data)
    split_seed = args.split_seed if args.split_seed is not None else seed
    fracs = _split_fractions(args)
    splits = split_dataset([r.sample_id for r in dataset.records], fracs, split_seed)
    repeats = int(_resolve(args, cfgfile, "repeats", args.repeats, 1))
    if repeats < 1:
        raise ValidationError("--repeats must be >= 1")

    ids = splits.test if splits.test else splits.dev
    reports = []
    for rep in range(repeats):
        run_seed = seed + rep
        tcfg = _resolve_train_config(args, cfgfile, run_seed)
        built = _baseline_model(args, cfgfile, dataset, run_seed)
        if isinstance(built, list):
            trained = []
            for member in built:
                best, _ = train(member, dataset, splits, tcfg)
                trained.append(best)
            model = VotingEnsemble(members=tuple(trained))
        else:
            model, _ = train(built, dataset, splits, tcfg)
        reports.append(evaluate(model, dataset, ids, seed=run_seed))

    metric_key = _resolve(args, cfgfile, "early_metric", args.metric, "uar")
    print(f"fusion={args.fusion}")
    print(reports[-1].to_text())
    values = [r.metric(metric_key) for r in reports]
    if repeats > 1:
        mean = statistics.mean(values)
        std = statistics.stdev(values)
        print(f"{metric_key} over {repeats} runs: {mean:.4f} ± {std:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            for report in reports:
                f.write(report.to_json() + "\n")
        _write_manifest(
            args.out,
            args,
            {"fusion": args.fusion, "splits": {"fractions": list(fracs), "seed": split_seed},
             "repeats": repeats, "metric": metric_key,
             "metric_values": values},
            {"seed": seed, "split_seed": split_seed,
             "run_seeds": [seed + i for i in range(repeats)]},
            {"report": args.out, "data": args.data},
            t0,
        )
    return 0


def _cmd_export_cls(args) -> int:
    t0 = time.time()
    model = load_model(args.model)
    dataset = _load_dataset(args.data)
    export_class_embeddings(model, dataset, args.out, seed=args.seed)
    _write_manifest(
        args.out,
        args,
        {"model": str(args.model)},
        {"seed": args.seed},
        {"embeddings": args.out},
        t0,
    )
    print(f"wrote {len(dataset.records)} embedding rows to {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "validate": _cmd_validate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "baseline": _cmd_baseline,
    "export-cls": _cmd_export_cls,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    if args.cmd is None:
        parser.print_help(sys.stderr)
        return 1
    args._raw_argv = argv
    try:
        return _COMMANDS[args.cmd](args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (DataFormatError, ModelFormatError) as e:
        detail = ""
        if isinstance(e, DataFormatError) and e.offset is not None:
            detail = f" (byte offset {e.offset})"
        print(f"error: {e}{detail}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CCMTError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
