"""Command-line experiment runner: run / cost / gen subcommands."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from fedprompt import backbone as B
from fedprompt import costmodel, experiment
from fedprompt.errors import ConfigError, DataError, FormatError

OUT_ROOT_ENV = "FEDPROMPT_OUT_ROOT"


def _resolve_out(out: str | None, cfg_out: str | None) -> Path:
    chosen = out or cfg_out
    if chosen is None:
        raise ConfigError("no output directory: pass --out or set out_dir in the config")
    path = Path(chosen)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _cell_worker(args) -> tuple[str, list[str], str | None]:
    config_doc, cell, out_dir = args
    cfg = experiment.ExperimentConfig.from_dict(config_doc)
    try:
        files = experiment.run_cell(cfg, cell, Path(out_dir))
        return cell.name, files, None
    except Exception as exc:  # noqa: BLE001 - cell isolation boundary
        return cell.name, [], f"{type(exc).__name__}: {exc}"


def cmd_run(args) -> int:
    cfg = experiment.load_config(args.config)
    if args.seed_override is not None:
        doc = dict(cfg.raw)
        doc["seed"] = args.seed_override
        cfg = experiment.ExperimentConfig.from_dict(doc)
    out_dir = _resolve_out(args.out, cfg.out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        print(f"error: {out_dir} exists and is not empty (use --force)", file=sys.stderr)
        return 2
    out_dir.mkdir(parents=True, exist_ok=True)

    cells = experiment.expand_cells(cfg)
    results = []
    jobs = max(1, args.jobs)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_worker, [(cfg.raw, c, str(out_dir)) for c in cells]))
    else:
        results = [_cell_worker((cfg.raw, c, str(out_dir))) for c in cells]

    failures = [(name, err) for name, _, err in results if err]
    manifest = {
        "seed": cfg.seed,
        "cells": [
            {"name": c.name, "seed": c.seed, "overrides": c.overrides,
             "files": files, "failed": err is not None}
            for c, (name, files, err) in zip(cells, results)
        ],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for name, err in failures:
        (out_dir / f"{name}.FAILED").write_text(err + "\n")
        print(f"cell {name} failed: {err}", file=sys.stderr)
    print(f"wrote {len(cells) - len(failures)}/{len(cells)} cells to {out_dir}")
    return 1 if failures else 0


def cmd_cost(args) -> int:
    cfg = experiment.load_config(args.config)
    reports = experiment.cost_reports(cfg)
    for name, rep in reports.items():
        print(f"== {name} ==")
        print(costmodel.summary_text(rep))
        print()
    ratio = reports["finetune"].upload_bytes_round / max(reports["promptfl"].upload_bytes_round, 1)
    print(f"per-round upload ratio (finetune / promptfl): {ratio:.1f}x")
    if args.out:
        out = _resolve_out(args.out, None)
        out.parent.mkdir(parents=True, exist_ok=True)
        doc = {name: rep.to_dict() for name, rep in reports.items()}
        doc["upload_ratio_per_round"] = ratio
        out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_gen(args) -> int:
    bb = B.generate_synthetic_backbone(
        k=args.k, d=args.d, depth=args.depth, seed=args.seed,
        samples_per_class=args.samples_per_class, noise=args.noise,
        d_img=args.d_img, c=args.c, max_seq=args.max_seq,
        test_per_class=args.test_per_class, alignment=args.alignment,
        prompt_len_hint=args.prompt_len_hint,
    )
    out = _resolve_out(args.out, None)
    out.parent.mkdir(parents=True, exist_ok=True)
    B.save_backbone(out, bb)
    print(f"wrote {out} ({bb.parameter_count()} backbone parameters, "
          f"{bb.image.features.shape[0]} samples)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fedprompt",
        description="Deterministic federated prompt-learning simulator",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="execute an experiment config (all sweep cells)")
    runp.add_argument("--config", required=True)
    runp.add_argument("--out", help=f"output directory (default: config out_dir, rooted at ${OUT_ROOT_ENV})")
    runp.add_argument("--force", action="store_true", help="write into a non-empty directory")
    runp.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    runp.add_argument("--seed-override", type=int, default=None)
    runp.set_defaults(func=cmd_run)

    costp = sub.add_parser("cost", help="print the closed-form feasibility table")
    costp.add_argument("--config", required=True)
    costp.add_argument("--out", help="also write the reports as JSON")
    costp.set_defaults(func=cmd_cost)

    genp = sub.add_parser("gen", help="generate a synthetic backbone file")
    genp.add_argument("--out", required=True)
    genp.add_argument("--k", type=int, required=True)
    genp.add_argument("--d", type=int, required=True)
    genp.add_argument("--depth", type=int, default=2)
    genp.add_argument("--seed", type=int, default=0)
    genp.add_argument("--samples-per-class", type=int, default=20)
    genp.add_argument("--noise", type=float, default=0.05)
    genp.add_argument("--d-img", type=int, default=None)
    genp.add_argument("--c", type=int, default=1)
    genp.add_argument("--max-seq", type=int, default=32)
    genp.add_argument("--test-per-class", type=int, default=None)
    genp.add_argument("--alignment", type=float, default=0.7)
    genp.add_argument("--prompt-len-hint", type=int, default=8)
    genp.set_defaults(func=cmd_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
