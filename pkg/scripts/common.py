"""Shared plumbing for the experiment scripts: synthetic data cache and JSON results."""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import time
from pathlib import Path

from visa.data import Dataset, DatasetConfig, generate_dataset
from visa.experiments import micro_config, paired_margins, run_ablation, run_protocols, train_and_evaluate

ROOT = Path(__file__).resolve().parent.parent
RESULTS = ROOT / "results"
SEEDS = (0, 1, 2)


def base_parser(description: str, blocks: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--blocks", type=int, default=blocks, help="blocks per (field, year) stratum")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--data-seed", type=int, default=2026)
    p.add_argument("--results", type=Path, default=RESULTS)
    return p


def settings(args) -> dict:
    return {
        "patch_size": args.patch_size,
        "blocks_per_stratum": args.blocks,
        "epochs": args.epochs,
        "data_seed": args.data_seed,
    }


def dataset_for(s: dict, results: Path) -> Dataset:
    """Generate (or reuse) the synthetic corpus for these settings."""
    root = results / "data" / f"p{s['patch_size']}_b{s['blocks_per_stratum']}_s{s['data_seed']}"
    if (root / "manifest.txt").exists():
        return Dataset(root)
    cfg = DatasetConfig(seed=s["data_seed"], patch_size=s["patch_size"], blocks_per_stratum=s["blocks_per_stratum"])
    return generate_dataset(root, cfg, force=True)


def save(name: str, payload: dict, results: Path) -> Path:
    results.mkdir(parents=True, exist_ok=True)
    path = results / f"{name}.json"
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def load(name: str, s: dict, results: Path = RESULTS) -> dict | None:
    """Cached payload for ``name`` if it was produced with the same settings."""
    path = results / f"{name}.json"
    if not path.exists():
        return None
    payload = json.loads(path.read_text())
    return payload if payload.get("settings") == s else None


# --- experiments ------------------------------------------------------------


def end_to_end(s: dict, results: Path = RESULTS) -> dict:
    ds = dataset_for(s, results)
    cfg = micro_config(s["patch_size"], epochs=s["epochs"])
    start = time.time()
    row = train_and_evaluate(cfg, ds)
    payload = {
        "settings": s,
        "miou": row["miou"],
        "iou_weed": row["iou_weed"],
        "ci": [row["ci_lo"], row["ci_hi"]],
        "best_epoch": row["best_epoch"],
        "params": row["params"],
        "minutes": (time.time() - start) / 60,
        "strata": [{k: r[k] for k in ("year", "field", "miou", "iou_weed")} for r in row["rows"]],
    }
    save("end_to_end", payload, results)
    return payload


ABLATIONS = (("drop_vimb", "drop_vimb"), ("ssm_layers=0", "ssm_layers"))


def ablation(s: dict, results: Path = RESULTS) -> dict:
    ds = dataset_for(s, results)
    cfg = micro_config(s["patch_size"], epochs=s["epochs"])
    variants = "full;" + ";".join(v for v, _ in ABLATIONS)
    start = time.time()
    rows = run_ablation(cfg, ds, variants, SEEDS)
    margins = {key: paired_margins(rows, "variant", "full", v).margins for v, key in ABLATIONS}
    payload = {
        "settings": s,
        "ssm_layers_full": cfg.ssm_layers,
        "rows": rows,
        "margins": margins,
        "median_margin": {k: statistics.median(v) for k, v in margins.items()},
        "minutes": (time.time() - start) / 60,
    }
    save("ablation", payload, results)
    return payload


PROTOCOLS = ("within_plot", "cross_plot", "cross_year")


def domain_shift(s: dict, results: Path = RESULTS) -> dict:
    ds = dataset_for(s, results)
    cfg = micro_config(s["patch_size"], epochs=s["epochs"])
    start = time.time()
    rows = run_protocols(cfg, ds, PROTOCOLS, SEEDS)
    medians = {p: statistics.median(r["miou"] for r in rows if r["protocol"] == p) for p in PROTOCOLS}
    margins = {p: paired_margins(rows, "protocol", "within_plot", p).margins for p in PROTOCOLS[1:]}
    payload = {
        "settings": s,
        "rows": rows,
        "median_miou": medians,
        "paired_margins": margins,
        "minutes": (time.time() - start) / 60,
    }
    save("domain_shift", payload, results)
    return payload


def main(name: str, fn, description: str, blocks: int) -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = base_parser(description, blocks).parse_args()
    payload = fn(settings(args), args.results)
    print(json.dumps({k: v for k, v in payload.items() if k not in ("rows", "strata")}, indent=2))
    print(f"wrote {args.results / (name + '.json')}")
