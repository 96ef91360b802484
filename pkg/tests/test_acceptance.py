"""The eleven acceptance criteria, each at its stated tolerance and runtime budget.

Every test records one PASS/FAIL line (shown in the terminal summary). Criteria
9 and 10 synthesise the 2,000-patient planted-signal cohort and run the full
predictor grid twice; they dominate the suite's runtime.
"""
from __future__ import annotations

import math
import os
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

import conftest
from amdprog import metrics as M
from amdprog.cohort import Dataset, export
from amdprog.config import load_config
from amdprog.folds import assign_folds, select
from amdprog.labeling import HorizonConfig, adjusted_rate, derive_label, exclude_reversals
from amdprog.pipeline import evaluate
from amdprog.predictors import _design, lr_objective
from amdprog.synthgen import GenConfig, generate
from amdprog.vision.net import (
    NetConfig,
    get_flat_params,
    init_net,
    loss_and_grad,
    predict_proba,
    set_flat_params,
    to_tensor,
)
from amdprog.vision.preprocess import detect_field_circle
from conftest import series, visit
from oracles import (
    central_difference,
    fused_nll,
    logistic_nll,
    pairwise_auc,
    render_disk,
    sensitivity_at_specificity,
)
from test_labeling import LABELS, REVERSALS, two_eye_case

ROOT = Path(__file__).resolve().parents[1]
CORES = min(4, os.cpu_count() or 1)
# the 30 minute budget is stated for a 4-core machine; folds run in parallel, so scale by cores
GRID_BUDGET_S = 30 * 60 * 4 / CORES


@contextmanager
def criterion(n: int, title: str, budget_s: float, prior_s: float = 0.0):
    """Record PASS/FAIL for criterion ``n``; ``prior_s`` counts work done before the block (fixtures)."""
    t0 = time.perf_counter() - prior_s
    try:
        yield
    except BaseException as exc:
        conftest.ACCEPTANCE[n] = f"criterion {n:2d} FAIL  {title}: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}"
        raise
    elapsed = time.perf_counter() - t0
    ok = elapsed <= budget_s
    status = "PASS" if ok else "FAIL"
    conftest.ACCEPTANCE[n] = f"criterion {n:2d} {status}  {title} ({elapsed:.2f}s, budget {budget_s:.0f}s)"
    assert ok, f"criterion {n} took {elapsed:.1f}s, budget {budget_s:.0f}s"


def random_set(rng, max_size=50, tie_heavy=False):
    n = int(rng.integers(2, max_size + 1))
    scores = rng.integers(0, 4, n).astype(float) if tie_heavy else np.round(rng.normal(0, 1, n), 2)
    labels = rng.random(n) < rng.uniform(0.2, 0.8)
    labels[0], labels[1] = True, False
    return scores, labels


def test_c01_degenerate_baseline_exactness():
    rng = np.random.default_rng(1)
    eyes = []
    for p in range(200):
        steps = [int(s) for s in rng.integers(5, 10, 3)] + ([11] if rng.random() < 0.3 else [9])
        eyes.append(series(steps, pid=f"P{p:03d}"))
    from amdprog.config import RunConfig

    cfg = RunConfig(predictors=("manual4",), cohorts=("iamd",))
    with criterion(1, "degenerate 4-category baseline on iAMD: AUC 0.500, sensitivity 20%", 1.0):
        agg = evaluate(cfg, Dataset(tuple(eyes)), write=False)["results"]["manual4"]["iamd"]["aggregate"]
        assert abs(agg["auc"]["mean"] - 0.5) <= 1e-9 and agg["auc"]["std"] <= 1e-9
        assert abs(agg["sensitivity"]["mean"] - 0.2) <= 1e-9


def test_c02_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(2)
    sets = [random_set(rng, tie_heavy=i % 3 == 0) for i in range(200)]
    with criterion(2, "trapezoidal AUC equals pairwise statistic on 200 sets", 5.0):
        for s, y in sets:
            assert abs(M.auc(M.roc_curve(s, y)) - pairwise_auc(s, y)) <= 1e-9


def test_c03_operating_point_matches_enumeration():
    rng = np.random.default_rng(3)
    sets = [random_set(rng, tie_heavy=i % 3 == 0) for i in range(100)]
    with criterion(3, "interpolated operating point matches enumeration on 100 sets", 5.0):
        for s, y in sets:
            sens, spec = M.evaluate_rule(s, y, M.operating_rule(M.roc_curve(s, y), 0.8))
            assert abs(sens - sensitivity_at_specificity(s, y, 0.8)) <= 1e-9
            assert abs(spec - 0.8) <= 1e-9


def test_c04_adjusted_rate_two_eye_case():
    sigma = 0.25 / math.sqrt(400)
    ex = two_eye_case()
    with criterion(4, "adjusted rate within 3 sigma of 0.25 in >= 19 of 20 seeds", 1.0):
        values = [adjusted_rate(ex, 100, seed) for seed in range(20)]
        passes = sum(abs(v - 0.25) <= 3 * sigma for v in values)
        assert passes >= 19, f"{passes}/20 seeds within 3 sigma = {3 * sigma:.4f}"


def test_c05_labeling_scenarios():
    from amdprog.labeling import build_examples
    from amdprog.labeling import ProgressionLabel as L

    with criterion(5, "the nine reversal and label scenarios", 1.0):
        for steps, kept in REVERSALS:
            assert exclude_reversals(series(steps)).steps == steps[:kept]
        for steps, days, label in LABELS:
            assert derive_label(series(steps, days), 0) is label
        ex = build_examples(Dataset((series([5, 5, 11], [0, 365, 730]),)))
        assert [(e.day, e.label) for e in ex] == [(0, L.NOT_PROGRESSED), (365, L.PROGRESSED)]
        assert build_examples(Dataset((series([11, 11, 12]),))) == []
        d, truth = generate(GenConfig(n_patients=60, grade_noise=0.0, hazard_scale=0.8, seed=4))
        hi = HorizonConfig().window_hi_days
        planted = sum(
            1 for s in d.eyes for v in s.visits
            if v.step < 10 and (c := truth.eyes[s.key].conversion_day) is not None and v.day < c <= v.day + hi
        )
        assert sum(e.progressed for e in build_examples(d)) == planted > 0


def test_c06_fold_properties():
    rng = np.random.default_rng(6)
    plans = []
    for _ in range(50):
        k = int(rng.integers(3, 13))
        n = int(rng.integers(k, 120))
        plans.append((k, n, int(rng.integers(0, 2**31))))
    with criterion(6, "50 random fold plans are patient-exclusive and balanced", 5.0):
        for k, n, seed in plans:
            ids = [f"P{i:03d}" for i in range(n)]
            plan = assign_folds(ids, k, seed)
            assert sorted(plan.assignment) == ids  # each patient in exactly one fold
            sizes = plan.fold_sizes()
            assert max(sizes) - min(sizes) <= 1
            assert Counter(r.test for r in plan.iterations) == Counter(range(k))
            assert Counter(r.tune for r in plan.iterations) == Counter(range(k))
            ex = [visit(3, 0, pid, eye) for pid in ids for eye in ("OD", "OS")]
            train, tune, test = select(plan, 0, ex)
            for part in (train, tune, test):
                assert all(c == 2 for c in Counter(v.patient_id for v in part).values())


def test_c07_gradient_checks():
    rng = np.random.default_rng(7)
    with criterion(7, "LR (1e-5) and FusionNet (1e-4) gradients match finite differences", 60.0):
        for i in range(10):
            X = rng.dirichlet(np.ones(5), size=60)
            y = (rng.random(60) < 0.2 + 0.6 * X[:, -1]).astype(float)
            w = rng.normal(0, 1.5, 6)
            _, g = lr_objective(w, _design(X), y, 1e-3)
            fd = central_difference(lambda v: logistic_nll(v, X, y, 1e-3), w, 1e-6)
            assert np.max(np.abs(g - fd) / np.maximum(1e-8, np.abs(g) + np.abs(fd))) < 1e-5
        for i in range(10):
            net = init_net(NetConfig(in_size=8, widths=(4, 4)), seed=i).to(torch.float64)
            a, b = rng.random((4, 8, 8, 3)), rng.random((4, 8, 8, 3))
            labels = rng.integers(0, 2, 4)
            _, grads = loss_and_grad(net, a, b, labels)
            analytic = np.concatenate([grads[n].ravel() for n, _ in net.named_parameters()])
            w0 = get_flat_params(net)
            ta, tb = to_tensor(a, torch.float64), to_tensor(b, torch.float64)

            def f(w):
                set_flat_params(net, w)
                return fused_nll(net, ta, tb, labels)

            fd = central_difference(f, w0, 1e-6)
            rel = np.abs(analytic - fd) / np.maximum(1e-8, np.abs(analytic) + np.abs(fd))
            assert rel.max() < 1e-4


def test_c08_fusion_symmetry_and_normalization():
    rng = np.random.default_rng(8)
    with criterion(8, "fusion symmetric and normalized over 100 nets", 10.0):
        for i in range(100):
            n_classes = int(rng.choice([2, 5, 12]))
            size = int(rng.choice([8, 16]))
            net = init_net(NetConfig(in_size=size, widths=(4, 8), n_classes=n_classes), seed=i)
            a, b = rng.random((2, size, size, 3)), rng.random((2, size, size, 3))
            p = predict_proba(net, a, b)
            assert np.array_equal(p, predict_proba(net, b, a))
            assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-6)


def test_c11_circle_recovery():
    rng = np.random.default_rng(11)
    disks = []
    for _ in range(50):
        size = int(rng.integers(64, 129))
        r = rng.uniform(0.3, 0.48) * size
        cx, cy = size / 2 + rng.uniform(-0.1, 0.1, 2) * size
        disks.append((render_disk(size, cx, cy, r, rng.uniform(0.3, 1.0)), cx, cy, r))
    with criterion(11, "circle recovered within 1 px / 2 px on 50 disks; black image not found", 5.0):
        for img, cx, cy, r in disks:
            c = detect_field_circle(img)
            assert c is not None
            assert math.hypot(c.center_x - cx, c.center_y - cy) <= 1 and abs(c.radius - r) <= 2
        assert detect_field_circle(np.zeros((64, 64, 3))) is None


# --- criteria 9 and 10: the planted-signal grid -----------------------------------

PLANTED_CONFIG = ROOT / "configs" / "planted_signal.yaml"
SCALES = ("4", "9")


@pytest.fixture(scope="module")
def planted_grid(tmp_path_factory):
    """Synthesise the planted cohort and evaluate the grid; returns (config, report, seconds)."""
    root = tmp_path_factory.mktemp("planted")
    cfg = load_config(PLANTED_CONFIG)
    cfg = replace(cfg, dataset=str(root / "data" / "visits.jsonl"), out=str(root / "run1"), workers=CORES)
    t0 = time.perf_counter()
    d, _ = generate(cfg.synth, root / "data")
    export(d, cfg.dataset)
    report = evaluate(cfg)
    return cfg, report, time.perf_counter() - t0


@pytest.mark.slow
def test_c09_planted_signal_reproduction(planted_grid):
    cfg, report, seconds = planted_grid
    title = "planted-signal grid ordering, end-to-end AUC and quartile pattern"
    with criterion(9, title, GRID_BUDGET_S, prior_s=seconds):
        res = report["results"]
        mean = {p: res[p]["none_early_iamd"]["aggregate"]["auc"]["mean"] for p in res}
        summary = ", ".join(f"{p}={v:.3f}" for p, v in mean.items())
        for s in SCALES:
            chain = ["end_to_end", f"twophase_lr{s}", f"twophase_mode{s}", f"manual{s}"]
            for hi, lo in zip(chain, chain[1:]):
                assert mean[hi] >= mean[lo], f"{hi} < {lo}: {summary}"
        assert mean["end_to_end"] >= 0.75, summary
        agg = res["end_to_end"]["none_early_iamd"]["aggregate"]
        q = [a["mean"] for a in agg["quartile_rates"]]
        base = agg["quartile_baseline"]["mean"]
        assert all(a <= b for a, b in zip(q, q[1:])), f"quartiles {q}"
        assert q[3] >= 2 * base, f"Q4 {q[3]:.4f} vs baseline {base:.4f}"
    conftest.ACCEPTANCE[9] += f" [{CORES} core(s); {summary}]"


@pytest.mark.slow
def test_c10_determinism(planted_grid):
    cfg, _, _ = planted_grid
    again = replace(cfg, out=str(Path(cfg.out).parent / "run2"))
    with criterion(10, "identical config reproduces metrics.json byte for byte", GRID_BUDGET_S):
        evaluate(again)
        assert (Path(again.out) / "metrics.json").read_bytes() == (Path(cfg.out) / "metrics.json").read_bytes()
