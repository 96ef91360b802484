"""Synthesise the planted-signal cohort, run the full predictor grid and print the table.

    python scripts/run_planted_grid.py --workers 4 --out runs/planted

Reuses an existing dataset under ``<out>/data`` unless ``--fresh`` is given.
"""
import argparse
import logging
import os
import time
from dataclasses import replace
from pathlib import Path

from amdprog.cohort import export
from amdprog.config import load_config
from amdprog.pipeline import evaluate
from amdprog.report import report
from amdprog.synthgen import generate

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "planted_signal.yaml"))
    ap.add_argument("--out", default="runs/planted")
    ap.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    ap.add_argument("--fresh", action="store_true", help="regenerate the dataset even if present")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    data = out / "data" / "visits.jsonl"
    cfg = replace(load_config(args.config), dataset=str(data), out=str(out / "run"), workers=args.workers)
    t0 = time.perf_counter()
    if args.fresh or not data.exists():
        d, _ = generate(cfg.synth, data.parent)
        export(d, data)
    t1 = time.perf_counter()
    rep = evaluate(cfg)
    t2 = time.perf_counter()
    print(report(cfg.out))
    print(f"synth {t1 - t0:.0f}s, evaluate {t2 - t1:.0f}s with {args.workers} worker(s)")

    res = rep["results"]
    auc = {p: res[p]["none_early_iamd"]["aggregate"]["auc"]["mean"] for p in res}
    for s in ("4", "9"):
        chain = ["end_to_end", f"twophase_lr{s}", f"twophase_mode{s}", f"manual{s}"]
        print(" >= ".join(f"{p} {auc[p]:.3f}" for p in chain if p in auc))
    if "end_to_end" in res:
        agg = res["end_to_end"]["none_early_iamd"]["aggregate"]
        q = [a["mean"] for a in agg["quartile_rates"]]
        print("end_to_end quartile rates " + " ".join(f"{x:.4f}" for x in q)
              + f", baseline {agg['quartile_baseline']['mean']:.4f}")


if __name__ == "__main__":
    main()
