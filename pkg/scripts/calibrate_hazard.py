"""Bisect the synthetic hazard scale until the adjusted none/early/iAMD rate hits a target.

    python scripts/calibrate_hazard.py --target 0.037 --patients 2000
"""
import argparse
from dataclasses import replace

from amdprog.labeling import Cohort, adjusted_rate, build_examples
from amdprog.synthgen import PRESETS, generate


def rates(cfg):
    ex = build_examples(generate(cfg)[0])
    return (adjusted_rate([e for e in ex if e.in_cohort(Cohort.NONE_EARLY_IAMD)], seed=cfg.seed),
            adjusted_rate([e for e in ex if e.in_cohort(Cohort.IAMD)], seed=cfg.seed))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", default="default")
    ap.add_argument("--target", type=float, default=0.037)
    ap.add_argument("--patients", type=int, default=2000)
    ap.add_argument("--iters", type=int, default=12)
    args = ap.parse_args()

    base = replace(PRESETS[args.preset], n_patients=args.patients, render_images=False)
    lo, hi = 0.0, 1.0
    for _ in range(args.iters):
        mid = (lo + hi) / 2
        r_all, r_iamd = rates(replace(base, hazard_scale=mid))
        print(f"hazard_scale={mid:.5f}  none/early/iAMD={r_all:.4f}  iAMD={r_iamd:.4f}")
        if r_all < args.target:
            lo = mid
        else:
            hi = mid
    print(f"calibrated hazard_scale ~ {(lo + hi) / 2:.4f}")


if __name__ == "__main__":
    main()
