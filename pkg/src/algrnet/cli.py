"""Command line entry point: ``algrnet <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import sys
from pathlib import Path

from . import geometry
from .checkpoint import load_model
from .config import apply_overrides, load_config
from .data import FoldPlan, load_manifest
from .errors import AlgrnetError, ConfigError
from .export import export_maps
from .synth import synth_generate, write_dataset
from .training import cross_validate, evaluate, format_report, make_dataset, split, train


def _overrides(cfg, pairs):
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        if section not in cfg.SECTIONS:
            raise ConfigError(f"unknown section {section!r} in --set")
        apply_overrides(cfg, section, {name: value})
    return cfg.validate()


def cmd_make_synthetic(args):
    cfg = _overrides(load_config(args.config), args.set)
    samples = synth_generate(cfg.synth)
    names = geometry.load_rule_table(cfg.synth.rules).names
    try:
        manifest = write_dataset(samples, args.out_dir, names)
    except OSError as exc:
        raise _DataIOError(f"cannot write dataset to {args.out_dir}: {exc}") from None
    print(f"wrote {len(samples)} samples to {manifest}")


def _apply_ablations(cfg, args):
    if args.no_skip_bilstm:
        cfg.model.skip_bilstm = False
    if args.plain_bilstm:
        cfg.model.plain_bilstm = True
    if args.no_fusion_refine:
        cfg.model.fusion_refine = False
    if args.fixed_scale is not None:
        cfg.model.fixed_scale = args.fixed_scale
    if args.fold is not None:
        cfg.data.fold = args.fold
    if args.out is not None:
        cfg.train.out_dir = args.out
    return cfg.validate()


def cmd_train(args):
    cfg = _apply_ablations(_overrides(load_config(args.config), args.set), args)
    if args.cv:
        summary, _ = cross_validate(cfg)
        print(_cv_text(summary))
        Path(cfg.train.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.train.out_dir) / "cv_summary.json").write_text(json.dumps(summary, indent=1))
    else:
        train(cfg)


def _cv_text(summary):
    line = f"{len(summary['folds'])}-fold average F1: {100 * summary['avg_f1']:.1f}"
    if "accuracy" in summary:
        line += f"   accuracy: {100 * summary['accuracy']:.1f}%"
    return line + f"   mean landmark error: {summary['mean_error']:.2f}%"


def _eval_one(checkpoint, manifest=None, folds=None, fold=None):
    model, cfg, meta = load_model(checkpoint)
    manifest = Path(manifest or cfg.data.manifest)
    samples = load_manifest(manifest)
    dataset = make_dataset(cfg, samples, manifest.parent)
    plan = None
    if cfg.data.folds > 1:
        folds = Path(folds) if folds else Path(checkpoint).parent / "folds.json"
        plan = FoldPlan.load(folds) if folds.exists() else None
    cfg.data.fold = meta.get("fold", 0) if fold is None else fold
    _, test_idx, _ = split(cfg, len(dataset), plan, samples)
    return evaluate(model, dataset.subset(test_idx))


def cmd_eval(args):
    reports = [_eval_one(c, args.manifest, args.folds, args.fold) for c in args.checkpoint]
    for ckpt, report in zip(args.checkpoint, reports):
        print(format_report(report, title=Path(ckpt).parent.name or "ALGRNet"))
    result = reports[0] if len(reports) == 1 else {
        "folds": reports,
        "avg_f1": sum(r["avg_f1"] for r in reports) / len(reports),
        "mean_error": sum(r["mean_error"] for r in reports) / len(reports)}
    if len(reports) > 1:
        if "accuracy" in reports[0]:
            result["accuracy"] = sum(r["accuracy"] for r in reports) / len(reports)
        print(_cv_text(result))
    if args.json:
        Path(args.json).write_text(json.dumps(result, indent=1, sort_keys=True))


def cmd_export_maps(args):
    model, cfg, _ = load_model(args.checkpoint)
    manifest = Path(args.manifest or cfg.data.manifest)
    samples = load_manifest(manifest)
    dataset = make_dataset(cfg, samples, manifest.parent)
    indices = [int(i) for i in args.samples.split(",")] if args.samples else None
    if indices and not all(0 <= i < len(dataset) for i in indices):
        raise _DataIOError(f"sample indices must lie in 0..{len(dataset) - 1}")
    try:
        paths = export_maps(model, dataset, args.out_dir, indices)
    except OSError as exc:
        raise _DataIOError(f"cannot write maps to {args.out_dir}: {exc}") from None
    print(f"wrote {len(paths)} maps to {args.out_dir}")


class _DataIOError(AlgrnetError):
    exit_code = 3


def build_parser():
    p = argparse.ArgumentParser(prog="algrnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    set_help = "override a config value, e.g. --set train.lr=0.005 (repeatable)"

    s = sub.add_parser("make-synthetic", help="render a synthetic dataset")
    s.add_argument("config")
    s.add_argument("out_dir")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help=set_help)
    s.set_defaults(func=cmd_make_synthetic)

    s = sub.add_parser("train", help="train one fold or run the k-fold protocol")
    s.add_argument("config")
    s.add_argument("--no-skip-bilstm", action="store_true", help="drop the relational module")
    s.add_argument("--plain-bilstm", action="store_true", help="ordinary BiLSTM, no skip gates")
    s.add_argument("--no-fusion-refine", action="store_true", help="drop gated fusion and refiner")
    s.add_argument("--fixed-scale", type=float, metavar="E",
                   help="fixed region scale with zero offsets (e.g. 0.14)")
    s.add_argument("--fold", type=int, help="test fold index")
    s.add_argument("--cv", action="store_true", help="train every fold and average")
    s.add_argument("--out", help="output directory")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help=set_help)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate checkpoints on their test folds")
    s.add_argument("checkpoint", nargs="+",
                   help="one checkpoint, or one per fold to average")
    s.add_argument("--manifest")
    s.add_argument("--folds", help="fold plan JSON (default: folds.json next to the checkpoint)")
    s.add_argument("--fold", type=int)
    s.add_argument("--json", help="also write the report as JSON")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-maps", help="write per-branch activation heatmaps")
    s.add_argument("checkpoint")
    s.add_argument("out_dir")
    s.add_argument("--manifest")
    s.add_argument("--samples", help="comma-separated sample indices (default: all)")
    s.set_defaults(func=cmd_export_maps)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except AlgrnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
