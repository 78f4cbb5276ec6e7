"""Command-line surface tying the modules together.

Exit codes: 0 success, 1 domain error (the error type is named on
stderr), 2 usage errors (argparse).  Progress goes to stderr; machine
output (CSV/JSON/binary) only ever goes to files, keeping stdout clean
for piping.  Set XMODAL_LOG=debug|info|quiet to control verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, synthetic
from .bundle import load_bundle, l2_normalize, normalize_anchors, save_bundle, split_bundle
from .errors import XmodalError
from .model import load_checkpoint, save_checkpoint
from .trainer import (
    TrainConfig,
    make_config,
    parse_config_file,
    run_pretrain,
    run_transfer,
    write_curve_csv,
)

log = logging.getLogger("xmodal")

_CONFIG_FLAGS: dict[str, type] = {
    "tau": float,
    "lambda_ism": float,
    "smoothing_alpha": float,
    "smoothing_mix": float,
    "ent_weight": float,
    "loss_variant": str,
    "reduction": str,
    "lr0": float,
    "lr_min": float,
    "weight_decay": float,
    "sgd_momentum": float,
    "batch_size": int,
    "epochs": int,
    "restart_period": int,
    "t_mult": int,
    "seed": int,
    "ema_momentum": float,
    "arch": str,
    "hidden_dim": int,
    "pretrain_epochs": int,
    "nce_tau": float,
    "proj_dim": int,
    "view_noise_sigma": float,
    "view_dropout": float,
}
_CONFIG_BOOL_FLAGS = ["smoothing_enabled", "shadow_in_loss"]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value config file")
    group = parser.add_argument_group("training config (flags override --config)")
    for name, kind in _CONFIG_FLAGS.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)
    for name in _CONFIG_BOOL_FLAGS:
        flag = name.replace("_", "-")
        group.add_argument(
            f"--{flag}", dest=name, action="store_const", const=True
        )
        group.add_argument(
            f"--no-{flag}", dest=name, action="store_const", const=False
        )


def _build_config(args: argparse.Namespace) -> TrainConfig:
    file_overrides = parse_config_file(args.config) if args.config else None
    flags = {
        name: getattr(args, name, None)
        for name in list(_CONFIG_FLAGS) + _CONFIG_BOOL_FLAGS
    }
    return make_config(file_overrides, **flags)


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(getattr(args, "out_dir", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split(args):
    bundle = load_bundle(args.bundle, prompts_override=getattr(args, "prompts", None))
    holdout = getattr(args, "holdout", 0.0) or 0.0
    if holdout > 0:
        return split_bundle(bundle, holdout, seed=getattr(args, "seed", None) or 0)
    return bundle, None


def _student_embeddings(checkpoint: Path, inputs, use_live: bool = False, ids=None):
    from .trainer import l2_normalize_embeddings_of

    model, shadow, _ = load_checkpoint(checkpoint)
    chosen = model if (use_live or shadow is None) else shadow.model
    return l2_normalize_embeddings_of(chosen, inputs, ids=ids)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    spec = synthetic.SynthSpec(
        num_classes=args.classes,
        embed_dim=args.dim,
        samples_per_class=args.per_class,
        noise_sigma=args.sigma,
        input_dim=args.input_dim,
        input_noise_sigma=args.input_sigma,
        seed=args.seed,
    )
    bundle, _ = synthetic.generate(spec)
    save_bundle(bundle, args.out)
    synthetic.write_truth_csv(Path(args.out).with_suffix(".truth.csv"), bundle)
    log.info("wrote %s (N=%d, D=%d, M=%d)", args.out, bundle.n, bundle.embed_dim, bundle.anchors.m)
    return 0


def _cmd_pretrain(args) -> int:
    config = _build_config(args)
    bundle, _ = _load_split(args)
    result = run_pretrain(bundle, config)
    save_checkpoint(args.out, result.model)
    log.info(
        "pretrained %d steps, final contrastive loss %.4f",
        len(result.losses),
        result.losses[-1] if result.losses else float("nan"),
    )
    return 0


def _cmd_transfer(args) -> int:
    config = _build_config(args)
    train_bundle, eval_bundle = _load_split(args)
    init_model = None
    if args.init:
        init_model, _, _ = load_checkpoint(args.init)
    result = run_transfer(train_bundle, config, eval_bundle=eval_bundle, init_model=init_model)
    out = _out_dir(args)
    save_checkpoint(out / "student.xms", result.model, result.shadow, step=result.state.step)
    write_curve_csv(out / "curve.csv", result.curve, config)
    if result.curve:
        last = result.curve[-1]
        log.info("epoch %s total loss %.5f zeroshot %s", last["epoch"], last["total"], last["zeroshot_acc"])
    return 0


def _cmd_zeroshot(args) -> int:
    bundle = load_bundle(args.bundle, prompts_override=args.prompts)
    anchors = normalize_anchors(bundle.anchors)
    if args.teacher:
        embeddings = l2_normalize(bundle.teacher_embeddings)
    else:
        embeddings = _student_embeddings(args.checkpoint, bundle.inputs, args.live_model)
    result = evaluation.zero_shot_classify(
        embeddings, anchors, labels=bundle.eval_labels, require_labels=True
    )
    print(f"zeroshot_accuracy={result.accuracy:.6f}")
    return 0


def _cmd_probe(args) -> int:
    bundle = load_bundle(args.bundle)
    if bundle.eval_labels is None:
        raise XmodalError("linear probe needs labels in the bundle")

    def embeddings_of(part):
        if args.teacher:
            return l2_normalize(part.teacher_embeddings)
        return _student_embeddings(args.checkpoint, part.inputs, args.live_model)

    train, test = split_bundle(bundle, args.holdout, seed=args.seed)
    c = args.c
    if args.search_c:
        sub_train, val = split_bundle(train, 0.25, seed=args.seed + 1)
        c = evaluation.search_probe_c(
            embeddings_of(sub_train), sub_train.eval_labels,
            embeddings_of(val), val.eval_labels,
            solver=args.solver,
        )
        log.info("selected C=%s on the validation split", c)
    result = evaluation.linear_probe(
        embeddings_of(train), train.eval_labels,
        embeddings_of(test), test.eval_labels,
        c=c, solver=args.solver,
    )
    print(f"probe_accuracy={result.top1_accuracy:.6f} converged={result.converged}")
    return 0


def _cmd_retrieve(args) -> int:
    bundle = load_bundle(args.bundle, prompts_override=args.prompts)
    anchors = normalize_anchors(bundle.anchors)
    if args.teacher:
        gallery = l2_normalize(bundle.teacher_embeddings)
    else:
        gallery = _student_embeddings(
            args.checkpoint, bundle.inputs, args.live_model,
            ids=bundle.teacher_embeddings.ids,
        )
    results = []
    for j in range(anchors.m):
        results.append(
            evaluation.retrieve_topk(
                anchors.data[j], gallery, k=args.k, query_id=anchors.prompts[j]
            )
        )
    evaluation.write_retrieval_jsonl(args.out, results)
    log.info("wrote %d retrieval lists to %s", len(results), args.out)
    return 0


def _cmd_sweep(args) -> int:
    config = _build_config(args)
    train_bundle, eval_bundle = _load_split(args)
    if eval_bundle is None:
        eval_bundle = train_bundle
    sizes = [int(s) for s in args.sizes.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = evaluation.prompt_sweep(train_bundle, eval_bundle, config, sizes, seeds)
    evaluation.write_sweep_csv(args.out, rows)
    log.info("wrote %d sweep rows to %s", len(rows), args.out)
    return 0


def _cmd_export_curves(args) -> int:
    run_dir = Path(args.run_dir)
    curves = sorted(run_dir.glob("**/curve*.csv"))
    if not curves:
        raise XmodalError(f"no curve CSVs under {run_dir}")
    lines = ["run,epoch,step,lr,csm_ce,ent_min,ism,total,zeroshot_acc"]
    for curve in curves:
        run = curve.parent.name or curve.stem
        for line in curve.read_text(encoding="utf-8").splitlines():
            if not line or line.startswith("#") or line.startswith("epoch,"):
                continue
            lines.append(f"{run},{line}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("merged %d curve files into %s", len(curves), args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xmodal",
        description="Cross-modal similarity transfer engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic bundle")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--input-dim", type=int, default=32)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--input-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pretrain", help="contrastive self-supervised pretraining")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("transfer", help="train a student against the bundle")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--prompts", type=Path, help="sidecar prompt list override")
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.add_argument("--holdout", type=float, default=0.0, help="held-out eval fraction")
    p.add_argument("--init", type=Path, help="warm-start checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("zeroshot", help="zero-shot accuracy of a checkpoint or the teacher")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--prompts", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--teacher", action="store_true", help="evaluate teacher embeddings")
    p.add_argument("--live-model", action="store_true", help="use the live model, not its EMA shadow")
    p.set_defaults(func=_cmd_zeroshot)

    p = sub.add_parser("probe", help="linear probe on frozen embeddings")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--teacher", action="store_true")
    p.add_argument("--live-model", action="store_true")
    p.add_argument("--c", type=float, default=30.0)
    p.add_argument("--search-c", action="store_true", help="grid-search C on a validation split")
    p.add_argument("--solver", choices=["gd", "lbfgs"], default="gd")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("retrieve", help="top-k image retrieval per anchor prompt")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--prompts", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--teacher", action="store_true")
    p.add_argument("--live-model", action="store_true")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("sweep", help="prompt-subset sweep")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--sizes", type=str, required=True, help="comma-separated subset sizes")
    p.add_argument("--seeds", type=str, default="0,1,2")
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("export-curves", help="merge curve CSVs from an output tree")
    p.add_argument("--run-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_export_curves)

    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("XMODAL_LOG", "info").lower()
    level = {"debug": logging.DEBUG, "info": logging.INFO, "quiet": logging.ERROR}.get(
        level_name, logging.INFO
    )
    logging.basicConfig(stream=sys.stderr, level=level, format="%(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except XmodalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
