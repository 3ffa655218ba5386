"""Command-line entry point: ``visa {generate,train,eval,ablate,infer,gradcheck,audit}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_key_values
from .data.dataset import Dataset, DatasetConfig, MissingBlocksError, generate_dataset
from .data.io import FormatError, read_patch, write_mask, write_patch
from .data.splits import PROTOCOLS, SplitManifest, audit
from .indices import LeakageError
from .index_branch import ConfigError

EXIT_ERROR = 1
EXIT_LEAKAGE = 3


def _load_config(args) -> RunConfig:
    """Defaults, then command-line flags, then the config file (which wins)."""
    cfg = RunConfig()
    flags = {k: getattr(args, k) for k in ("seed", "epochs", "batch", "lr") if getattr(args, k, None) is not None}
    cfg = dataclasses.replace(cfg, **flags)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = dataclasses.replace(cfg, **parse_key_values(path.read_text(), RunConfig))
    cfg.validate()
    return cfg


def cmd_generate(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            print(f"error: output directory {out} is not empty; pass --force", file=sys.stderr)
            return EXIT_ERROR
        shutil.rmtree(out)
    cfg = DatasetConfig(
        seed=args.seed,
        patch_size=args.patch_size,
        blocks_per_stratum=args.blocks,
        shift_strength=args.shift_strength,
    )
    ds = generate_dataset(out, cfg, args.protocol)
    m = ds.manifest
    print(f"generated {len(m.entries)} blocks ({4 * len(m.entries)} patches of {cfg.patch_size}x{cfg.patch_size}) in {out}")
    print(f"protocol {m.protocol}: train {len(m.train)} val {len(m.val)} test {len(m.test)} blocks; audit clean")
    return 0


def _dataset(args, protocol=None) -> Dataset:
    ds = Dataset(args.data)
    if getattr(args, "manifest", None):
        ds = ds.with_manifest(SplitManifest.read(args.manifest))
    elif protocol and protocol != ds.manifest.protocol:
        ds = ds.with_manifest(ds.split(protocol))
    return ds


def cmd_train(args) -> int:
    from .train import train

    cfg = _load_config(args)
    ds = _dataset(args)
    problems = audit(ds.manifest)
    if problems:
        print("leakage audit failed, training not started:", file=sys.stderr)
        for p in problems:
            print(f"  {p}", file=sys.stderr)
        return EXIT_LEAKAGE
    result = train(cfg, ds, args.out, verbose=True)
    print(f"best epoch {result.best_epoch} val_miou {result.best_val_miou:.4f}; checkpoint {result.checkpoint}")
    return 0


def _write_rows(path: Path, rows, columns) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def cmd_eval(args) -> int:
    from .checkpoint import load_predictor
    from .evaluate import evaluate_protocol, write_csv
    from .experiments import block_labeler

    predictor, cfg = load_predictor(args.checkpoint)
    ds = _dataset(args, args.protocol)
    replicates = args.replicates if args.replicates is not None else cfg.bootstrap_replicates
    _, rows = evaluate_protocol(block_labeler(predictor, cfg), ds.manifest, ds, replicates, cfg.seed)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"metrics_{ds.manifest.protocol}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out)
    for row in rows:
        print(f"{row['protocol']} {row['year']} {row['field']}: miou {row['miou']:.4f} "
              f"[{row['ci_lo']:.4f}, {row['ci_hi']:.4f}] weed {row['iou_weed']:.4f} kappa {row['kappa']:.4f}")
    print(f"wrote {out}")
    return 0 if all(np.isfinite(r["miou"]) for r in rows) else EXIT_ERROR


def cmd_ablate(args) -> int:
    from .experiments import ABLATION_COLUMNS, run_ablation

    cfg = _load_config(args)
    ds = _dataset(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(cfg, ds, args.spec, seeds, out, verbose=args.verbose)
    _write_rows(out / "ablation.csv", rows, ABLATION_COLUMNS)
    print(f"{'variant':<24}{'seed':>6}{'miou':>9}{'ci':>20}{'weed':>8}{'params':>10}")
    for r in rows:
        print(f"{r['variant']:<24}{r['seed']:>6}{r['miou']:>9.4f}  [{r['ci_lo']:.4f}, {r['ci_hi']:.4f}]"
              f"{r['iou_weed']:>8.4f}{r['params']:>10}")
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def cmd_infer(args) -> int:
    from .checkpoint import load_predictor
    from .inference import sliding_window_infer

    predictor, cfg = load_predictor(args.checkpoint)
    image = read_patch(args.image)
    window = min(cfg.infer_window, *image.shape[-2:]) if args.window is None else args.window
    stride = min(cfg.infer_stride, window)
    result = sliding_window_infer(predictor, image, window, stride, tau=cfg.tau)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_mask(out / "labels.bawm", result.labels)
    # confidence uses the patch container with a single band
    write_patch(out / "confidence.bawp", result.confidence[None])
    counts = np.bincount(result.labels.ravel(), minlength=3)
    print(f"wrote {out / 'labels.bawm'} and {out / 'confidence.bawp'}; class counts {counts.tolist()}"
          + ("; image smaller than window, reflect-padded" if result.padded else ""))
    return 0


def cmd_gradcheck(args) -> int:
    from .experiments import gradcheck_micro

    report, seconds = gradcheck_micro(seed=args.seed)
    name = max(report.max_rel_error, key=report.max_rel_error.get)
    ok = report.passed(args.tol)
    print(f"checked {sum(report.checked.values())} coordinates over {len(report.checked)} tensors in {seconds:.1f}s")
    print(f"worst relative error {report.worst:.3e} ({name}); tolerance {args.tol:g}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else EXIT_ERROR


def cmd_audit(args) -> int:
    manifest = SplitManifest.read(args.manifest)
    problems = audit(manifest)
    for p in problems:
        print(f"violation: {p}", file=sys.stderr)
    if problems:
        return EXIT_LEAKAGE
    print(f"{args.manifest}: {manifest.protocol} manifest clean "
          f"(train {len(manifest.train)}, val {len(manifest.val)}, test {len(manifest.test)})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="visa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset directory and manifest")
    p.add_argument("--seed", type=int, default=2026)
    p.add_argument("--protocol", choices=PROTOCOLS, default="within_plot")
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=256)
    p.add_argument("--blocks", type=int, default=4, help="blocks per field-year")
    p.add_argument("--shift-strength", type=float, default=1.0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate)

    def run_flags(p):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)

    p = sub.add_parser("train", help="train a model on the manifest's train blocks")
    run_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", help="override the dataset's manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test blocks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--manifest")
    p.add_argument("--replicates", type=int)
    p.add_argument("--out", help="CSV path (default: next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare single-factor variants")
    run_flags(p)
    p.add_argument("--spec", default="full;drop_vimb;ssm_layers=0;heads=4")
    p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="label map and confidence for one image file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--window", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full micro model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("audit", help="check a manifest for block leakage")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except LeakageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_LEAKAGE
    except (FileNotFoundError, MissingBlocksError, FormatError, ConfigError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
