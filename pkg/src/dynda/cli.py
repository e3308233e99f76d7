"""Command-line entry point: ``dynda <command> ...``.

Datasets are looked up by name under ``--data-root`` (default
``$DYNDA_UCR_ROOT``) or in an INI ``--manifest`` (default
``$DYNDA_MANIFEST``). The name ``SineSquare`` is a built-in toy set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analyze
from . import augment as aug
from .model import load_checkpoint
from .series import TimeSeries, load_dataset, parse_ucr_tsv, prepare, serialize_ucr_tsv, sine_square_dataset
from .train import TrainConfig, append_result, evaluate, run_trials, tta_evaluate

log = logging.getLogger("dynda")


def _dataset(args):
    if args.dataset == "SineSquare":
        return prepare(sine_square_dataset())
    root = args.data_root or os.environ.get("DYNDA_UCR_ROOT")
    manifest = args.manifest or os.environ.get("DYNDA_MANIFEST")
    if root is None and manifest is None:
        raise SystemExit("no dataset location: pass --data-root/--manifest or set DYNDA_UCR_ROOT")
    return prepare(load_dataset(args.dataset, root=root, manifest=manifest))


def _add_data_args(p):
    p.add_argument("--dataset", required=True)
    p.add_argument("--data-root", default=None, help="UCR archive root (default $DYNDA_UCR_ROOT)")
    p.add_argument("--manifest", default=None, help="INI manifest of dataset files")


def _augment_cfg(args) -> aug.AugmentConfig:
    return aug.AugmentConfig(
        jitter_sigma=args.jitter_sigma,
        mw_sigma=args.mw_sigma,
        mw_mu=args.mw_mu,
        tw_sigma=args.tw_sigma,
        ww_ratio=args.ww_ratio,
    )


def _add_augment_args(p):
    d = aug.AugmentConfig()
    p.add_argument("--jitter-sigma", type=float, default=d.jitter_sigma)
    p.add_argument("--mw-sigma", type=float, default=d.mw_sigma)
    p.add_argument("--mw-mu", type=float, default=d.mw_mu)
    p.add_argument("--tw-sigma", type=float, default=d.tw_sigma)
    p.add_argument("--ww-ratio", type=float, default=d.ww_ratio)


# ---------------------------------------------------------------------------
# commands


def cmd_augment(args):
    cfg = _augment_cfg(args)
    series = parse_ucr_tsv(Path(args.inp).read_text())
    fn = aug.TRANSFORMS[args.method]
    root = aug.RngStream(args.seed)
    out = [TimeSeries(fn(s.values, cfg, root.child(i)), s.label) for i, s in enumerate(series)]
    Path(args.out).write_text(serialize_ucr_tsv(out))
    print(f"wrote {len(out)} series to {args.out}")


def cmd_train(args):
    data = _dataset(args)
    cfg = TrainConfig(
        variant=args.variant,
        lam=args.lam,
        iterations=args.iters,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        augment_cfg=_augment_cfg(args),
    )
    out = Path(args.out)
    report = run_trials(cfg, data, n_trials=args.trials, out_dir=out)
    append_result(out / "results.csv", data.name, cfg.variant, cfg.lam, report)
    print(json.dumps({
        "dataset": data.name,
        "variant": cfg.variant,
        "lambda": cfg.lam,
        "mean": report.mean,
        "std": report.std,
        "per_trial": report.per_trial_accuracy,
    }))


def cmd_evaluate(args):
    model, _ = load_checkpoint(args.checkpoint)
    data = _dataset(args)
    split = data.test if args.split == "test" else data.train
    print(json.dumps({"dataset": data.name, "split": args.split, "accuracy": evaluate(model, split)}))


def cmd_tta(args):
    model, _ = load_checkpoint(args.checkpoint)
    data = _dataset(args)
    acc = tta_evaluate(model, data.test, _augment_cfg(args), args.seed)
    print(json.dumps({"dataset": data.name, "seed": args.seed, "tta_accuracy": acc}))


def cmd_analyze(args):
    model, _ = load_checkpoint(args.checkpoint)
    data = _dataset(args)
    split = data.test if args.split == "test" else data.train
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _augment_cfg(args)
    written = []
    if args.what == "features":
        seed = args.seed if args.augmented else None
        written.append(analyze.export_features(model, split, out / f"features_{args.stage}.csv", args.stage, seed, cfg))
    else:
        records = analyze.collect_alphas(model, split, cfg, args.seed)
        if args.what == "alphas":
            written.append(analyze.write_alphas(out / "alphas.csv", records, seed=args.seed))
            written.append(analyze.write_alpha_table(out / "alpha_table.csv", analyze.alpha_table(records), len(records)))
        elif args.what == "histogram":
            written.append(analyze.write_histogram(out / "histogram.csv", analyze.alpha_histogram(records, args.bins)))
        else:
            top, bottom = analyze.extreme_samples(records, min(args.k, len(records)))
            written.append(analyze.write_extremes(out / "extremes.csv", top, bottom))
    for path in written:
        print(path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynda", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="apply one augmentation to a series file")
    p.add_argument("--method", choices=aug.METHODS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _add_augment_args(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train k trials and record test accuracy")
    _add_data_args(p)
    p.add_argument("--variant", choices=("proposed", "no_aug", "concat"), default="proposed")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out", required=True)
    _add_augment_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    _add_data_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tta", help="test-time augmentation accuracy of a no_aug checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_data_args(p)
    _add_augment_args(p)
    p.set_defaults(func=cmd_tta)

    p = sub.add_parser("analyze", help="export gate weights and features as CSV")
    p.add_argument("what", choices=("alphas", "histogram", "extremes", "features"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--stage", choices=analyze.STAGES, default="fused")
    p.add_argument("--augmented", action="store_true", help="feed seeded augmented views when exporting features")
    _add_data_args(p)
    _add_augment_args(p)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    np.set_printoptions(precision=4)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
