"""Command line entry point: ``amdprog {synth,ingest,labels,split,evaluate,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .cohort import CohortError, export, ingest, summary
from .config import load_config, with_overrides
from .folds import assign_folds
from .labeling import Cohort, adjusted_rate, build_examples, export_examples
from .synthgen import generate

log = logging.getLogger("amdprog")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides config 'out')")
    for name in ("fold", "sampling", "training", "synthesis"):
        p.add_argument(f"--seed-{name}", type=int, dest=f"seed_{name}")


def _config(args):
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, fold=args.seed_fold, sampling=args.seed_sampling,
                         training=args.seed_training, synthesis=args.seed_synthesis)
    if args.out:
        cfg = replace(cfg, out=args.out)
    if getattr(args, "dataset", None):
        cfg = replace(cfg, dataset=args.dataset)
    return cfg


def cmd_synth(args) -> int:
    cfg = _config(args)
    gen = cfg.synth
    if args.patients is not None:
        gen = replace(gen, n_patients=args.patients)
    if args.no_images:
        gen = replace(gen, render_images=False)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    d, truth = generate(gen, out)
    export(d, out / "visits.jsonl")
    (out / "truth.jsonl").write_text(truth.to_jsonl(), encoding="utf-8")
    (out / "gen_config.json").write_text(json.dumps(gen.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"wrote {d.n_visits} visits for {len(d.patients)} patients to {out / 'visits.jsonl'}")
    return 0


def _dataset(args, cfg):
    path = args.dataset or cfg.dataset
    if not path:
        raise SystemExit("a dataset path is required (--dataset or config 'dataset')")
    return ingest(path)


def cmd_ingest(args) -> int:
    cfg = _config(args)
    d = _dataset(args, cfg)
    text = json.dumps(summary(d).to_dict(), indent=1)
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "summary.json").write_text(text + "\n")
    return 0


def cmd_labels(args) -> int:
    cfg = _config(args)
    d = _dataset(args, cfg)
    ex = build_examples(d, cfg.horizon)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    export_examples(ex, out / "labels.jsonl")
    stats = {}
    for c in Cohort:
        sub = [e for e in ex if e.in_cohort(c)]
        stats[c.value] = {
            "n_examples": len(sub),
            "n_progressed": sum(e.progressed for e in sub),
            "adjusted_rate": adjusted_rate(sub, cfg.n_samples, cfg.seeds.sampling) if sub else None,
        }
    print(json.dumps(stats, indent=1))
    return 0


def cmd_split(args) -> int:
    cfg = _config(args)
    d = _dataset(args, cfg)
    k = args.k or cfg.k
    plan = assign_folds(d.patients, k, cfg.seeds.fold)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fold_plan.json").write_text(plan.to_json())
    print(f"fold sizes (patients): {plan.fold_sizes()}")
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate

    cfg = _config(args)
    if args.predictors:
        cfg = replace(cfg, predictors=tuple(args.predictors.split(",")))
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    evaluate(cfg)
    print(f"wrote {Path(cfg.out) / 'metrics.json'}")
    return 0


def cmd_report(args) -> int:
    from .report import report

    print(report(args.results), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amdprog", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort (JSONL + PNGs + ground truth)")
    _common(p)
    p.add_argument("--patients", type=int)
    p.add_argument("--no-images", action="store_true")
    p.set_defaults(func=cmd_synth)

    for name, func, help_ in (
        ("ingest", cmd_ingest, "validate a visit file and print summary statistics"),
        ("labels", cmd_labels, "derive 1-year labels and write labels.jsonl"),
        ("split", cmd_split, "assign patients to folds and write fold_plan.json"),
        ("evaluate", cmd_evaluate, "run the k-fold evaluation grid"),
    ):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--dataset")
        if name == "split":
            p.add_argument("--k", type=int)
        if name == "evaluate":
            p.add_argument("--predictors", help="comma-separated predictor list")
            p.add_argument("--workers", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="render table and concatenated CSVs from an evaluation")
    p.add_argument("results", help="evaluation output directory")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CohortError, ValueError, RuntimeError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
