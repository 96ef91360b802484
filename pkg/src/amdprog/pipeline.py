"""The k-fold evaluation loop behind ``amdprog evaluate``."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .cohort import Dataset, ingest
from .folds import FoldPlan, assign_folds, select
from .labeling import LabeledExample, build_examples, exclude_reversals
from .predictors import (
    N_CLASSES,
    lr_fit,
    lr_score,
    manual_grade4_score,
    manual_step_score,
)
from .config import RunConfig
from .vision.checkpoint import save_checkpoint
from .vision.net import init_net, predict_proba
from .vision.preprocess import load_png, preprocess, to_uint8
from .vision.train import PairSet, train

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class ImageBank:
    """Preprocessed stereo pairs (uint8) indexed by visit key."""

    left: np.ndarray
    right: np.ndarray
    index: dict[tuple[str, str, int], int]
    dropped: int

    @classmethod
    def load(cls, d: Dataset, base_dir: Path, size: int, luminance_threshold: float = 0.05) -> "ImageBank":
        lefts, rights, index = [], [], {}
        dropped = 0
        for series in d.eyes:
            for v in exclude_reversals(series).visits:
                if v.stereo is None:
                    dropped += 1
                    continue
                pair = [preprocess(load_png(base_dir / p), size, luminance_threshold) for p in v.stereo]
                if pair[0] is None or pair[1] is None:
                    dropped += 1
                    continue
                index[v.key] = len(lefts)
                lefts.append(to_uint8(pair[0]))
                rights.append(to_uint8(pair[1]))
        if dropped:
            log.info("dropped %d visits without a usable stereo pair", dropped)
        shape = (0, size, size, 3)
        left = np.stack(lefts) if lefts else np.zeros(shape, np.uint8)
        right = np.stack(rights) if rights else np.zeros(shape, np.uint8)
        return cls(left, right, index, dropped)

    def rows(self, keys) -> np.ndarray:
        return np.array([self.index[k] for k in keys], dtype=np.int64)

    def proba(self, net, items) -> np.ndarray:
        r = self.rows([e.key for e in items])
        return predict_proba(net, self.left[r], self.right[r])

    def pairs(self, keys, labels, groups=None) -> PairSet:
        r = self.rows(keys)
        return PairSet(self.left[r], self.right[r], np.asarray(labels, dtype=np.int64), groups)


def _eye_groups(items) -> np.ndarray:
    ids: dict = {}
    return np.array([ids.setdefault(e.eye_key, len(ids)) for e in items], dtype=np.int64)


def _grade_class(v, scale: str) -> int:
    return v.grade4.index if scale == "4" else v.step - 1


# state shared with forked workers
_CTX: dict = {}


def _fit_net(cfg: RunConfig, n_classes: int, train_set: PairSet, tune_set: PairSet, seed: int,
             monitor: str, ckpt: Path | None):
    net = init_net(replace(cfg.vision.net, n_classes=n_classes), seed)
    net, state = train(net, train_set, tune_set, cfg.vision.train, seed=seed, monitor=monitor)
    if ckpt is not None:
        save_checkpoint(net, ckpt)
    return net, state


def run_iteration(it: int) -> dict:
    cfg: RunConfig = _CTX["cfg"]
    plan: FoldPlan = _CTX["plan"]
    examples: list[LabeledExample] = _CTX["examples"]
    bank: ImageBank | None = _CTX["bank"]
    dataset: Dataset = _CTX["dataset"]
    out: Path | None = _CTX["out"]
    torch.set_num_threads(cfg.torch_threads)

    train_ex, tune_ex, test_ex = select(plan, it, examples)
    scores: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    training: dict[str, dict] = {}
    fold_dir = None
    if out is not None:
        fold_dir = out / "folds" / f"fold{it:02d}"
        fold_dir.mkdir(parents=True, exist_ok=True)

    for p in cfg.predictors:
        if p == "manual4":
            scores[p] = tuple(np.array([manual_grade4_score(e) for e in s]) for s in (tune_ex, test_ex))
        elif p == "manual9":
            scores[p] = tuple(np.array([manual_step_score(e) for e in s]) for s in (tune_ex, test_ex))

    # phase-one grade networks, one per scale that any two-phase predictor needs
    scales = sorted({p[-1] for p in cfg.predictors if p.startswith("twophase")})
    for scale in scales:
        visits = {"train": [], "tune": []}
        roles = plan.iterations[it]
        for series in dataset.eyes:
            fold = plan.assignment[series.patient_id]
            role = "tune" if fold == roles.tune else "train" if fold in roles.train else None
            if role is None:
                continue
            visits[role] += [v for v in exclude_reversals(series).visits if v.key in bank.index]
        sets = {
            r: bank.pairs([v.key for v in vs], [_grade_class(v, scale) for v in vs], _eye_groups(vs))
            for r, vs in visits.items()
        }
        ckpt = fold_dir / f"phase1_{scale}.npz" if fold_dir else None
        net, state = _fit_net(cfg, N_CLASSES[scale], sets["train"], sets["tune"],
                              derive_seed(cfg.seeds.training, it, 1 + int(scale)), "loglik", ckpt)
        training[f"phase1_{scale}"] = state.to_dict()
        dist = {name: bank.proba(net, s) for name, s in (("train", train_ex), ("tune", tune_ex), ("test", test_ex))}
        mode = f"twophase_mode{scale}"
        if mode in cfg.predictors:
            scores[mode] = tuple(np.argmax(dist[n], axis=1).astype(float) for n in ("tune", "test"))
        lrp = f"twophase_lr{scale}"
        if lrp in cfg.predictors:
            model = lr_fit(dist["train"], [e.progressed for e in train_ex], l2=cfg.lr_l2,
                           tol=cfg.lr_tol, max_iters=cfg.lr_max_iters)
            if fold_dir:
                model.save(fold_dir / f"lr_{scale}.json")
            training[lrp] = {"n_iters": model.n_iters}
            scores[lrp] = tuple(lr_score(model, dist[n]) for n in ("tune", "test"))

    if "end_to_end" in cfg.predictors:
        tr = bank.pairs([e.key for e in train_ex], [int(e.progressed) for e in train_ex], _eye_groups(train_ex))
        tu = bank.pairs([e.key for e in tune_ex], [int(e.progressed) for e in tune_ex])
        ckpt = fold_dir / "end_to_end.npz" if fold_dir else None
        net, state = _fit_net(cfg, 2, tr, tu, derive_seed(cfg.seeds.training, it, 0), "auc", ckpt)
        training["end_to_end"] = state.to_dict()
        scores["end_to_end"] = (bank.proba(net, tune_ex)[:, 1], bank.proba(net, test_ex)[:, 1])

    sample_seed = derive_seed(cfg.seeds.sampling, it)
    results: dict = {}
    for p in cfg.predictors:
        tune_s, test_s = scores[p]
        results[p] = {}
        for c in cfg.cohorts:
            tune = [M.ScoredExample(e.eye_key, float(s), e.progressed, e.day)
                    for e, s in zip(tune_ex, tune_s) if e.in_cohort(c)]
            test = [M.ScoredExample(e.eye_key, float(s), e.progressed, e.day)
                    for e, s in zip(test_ex, test_s) if e.in_cohort(c)]
            results[p][c] = _cell(tune, test, cfg, sample_seed)
    return {"fold": it, "results": results, "training": training,
            "n_train": len(train_ex), "n_tune": len(tune_ex), "n_test": len(test_ex)}


def _cell(tune, test, cfg: RunConfig, seed: int) -> dict:
    try:
        fm = M.resampled_metrics(test, tune, cfg.n_samples, cfg.target_specificity, seed)
        q = M.quartile_rates(test, cfg.n_samples, seed)
    except ValueError as exc:
        return {"error": str(exc)}
    roc = fm.test_roc
    return {
        **fm.to_dict(),
        "quartile_rates": list(q.rates),
        "quartile_baseline": q.baseline,
        "quartile_skipped_draws": q.skipped,
        "roc": None if roc is None else [roc.fpr.tolist(), roc.tpr.tolist(), roc.thresholds.tolist()],
    }


def _agg(values) -> dict | None:
    v = [x for x in values if x is not None and not (isinstance(x, float) and math.isnan(x))]
    if len(v) < 2:
        return None
    mean, std = M.aggregate(v)
    return {"mean": mean, "std": std, "n_folds": len(v)}


def aggregate_cells(folds: list[dict]) -> dict:
    ok = [f for f in folds if "error" not in f]
    agg = {k: _agg([f[k] for f in ok]) for k in ("auc", "sensitivity", "specificity", "quartile_baseline")}
    agg["quartile_rates"] = [_agg([f["quartile_rates"][i] for f in ok]) for i in range(4)]
    return agg


def _clean(obj):
    """NaN/inf -> None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _csv_text(header: list[str], rows: list[list], config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if x is None else (repr(float(x)) if isinstance(x, float) else x) for x in r])
    return buf.getvalue()


def write_outputs(report: dict, out: Path) -> None:
    h = report["config_hash"]
    for p, by_cohort in report["results"].items():
        for c, cell in by_cohort.items():
            rows, curves = [], []
            for f in cell["folds"]:
                if f.get("roc") is None:
                    continue
                fpr, tpr, thr = f["roc"]
                curves.append(M.RocCurve(np.array(fpr), np.array(tpr), np.array(thr, dtype=float)))
                rows += [[f["fold"], a, b, t] for a, b, t in zip(fpr, tpr, thr)]
            if curves:
                grid, mean_tpr = M.mean_roc(curves)
                rows += [["mean", float(a), float(b), None] for a, b in zip(grid, mean_tpr)]
            (out / f"roc_{p}_{c}.csv").write_text(_csv_text(["fold", "fpr", "tpr", "threshold"], rows, h))
            qrows = [[f["fold"], *f.get("quartile_rates", [None] * 4), f.get("quartile_baseline")]
                     for f in cell["folds"]]
            qa = cell["aggregate"]["quartile_rates"]
            base = cell["aggregate"]["quartile_baseline"]
            for stat in ("mean", "std"):
                qrows.append([stat, *[None if a is None else a[stat] for a in qa], None if base is None else base[stat]])
            (out / f"quartiles_{p}_{c}.csv").write_text(
                _csv_text(["fold", "q1", "q2", "q3", "q4", "baseline"], qrows, h))
    # roc vertices are in the CSVs; keep metrics.json compact
    slim = json.loads(json.dumps(report))
    for by_cohort in slim["results"].values():
        for cell in by_cohort.values():
            for f in cell["folds"]:
                f.pop("roc", None)
    (out / "metrics.json").write_text(json.dumps(slim, indent=1, sort_keys=True, allow_nan=False) + "\n")


def evaluate(cfg: RunConfig, dataset: Dataset | None = None, base_dir: str | Path | None = None,
             write: bool = True) -> dict:
    """Run the full k-fold grid; returns the report dict (also written under ``cfg.out``)."""
    if dataset is None:
        if cfg.dataset is None:
            raise PipelineError("no dataset given")
        dataset = ingest(cfg.dataset)
        base_dir = Path(cfg.dataset).resolve().parent
    base_dir = Path(base_dir or ".")
    if len(dataset.patients) < cfg.k:
        raise PipelineError(f"{len(dataset.patients)} patients is fewer than k={cfg.k}")
    examples = build_examples(dataset, cfg.horizon)
    n_labeled = len(examples)

    bank = None
    if cfg.image_predictors:
        if not any(v.stereo for v in dataset.visits):
            raise PipelineError(f"predictor {cfg.image_predictors[0]!r} needs images but the dataset has none")
        bank = ImageBank.load(dataset, base_dir, cfg.vision.net.in_size, cfg.vision.luminance_threshold)
        examples = [e for e in examples if e.key in bank.index]
        log.info("%d of %d labeled examples have usable images", len(examples), n_labeled)

    plan = assign_folds(dataset.patients, cfg.k, cfg.seeds.fold)
    out = Path(cfg.out) if write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "fold_plan.json").write_text(plan.to_json())

    _CTX.update(cfg=cfg, plan=plan, examples=examples, bank=bank, dataset=dataset, out=out)
    try:
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers, mp_context=multiprocessing.get_context("fork")) as ex:
                folds = list(ex.map(run_iteration, range(cfg.k)))
        else:
            folds = []
            for it in range(cfg.k):
                folds.append(run_iteration(it))
                log.info("fold %d/%d done", it + 1, cfg.k)
    finally:
        _CTX.clear()

    results = {}
    for p in cfg.predictors:
        results[p] = {}
        for c in cfg.cohorts:
            cells = [{"fold": f["fold"], **f["results"][p][c]} for f in folds]
            results[p][c] = {"folds": cells, "aggregate": aggregate_cells(cells)}
    report = _clean({
        "config_hash": cfg.config_hash(),
        "config": cfg.provenance(),
        "n_labeled_examples": n_labeled,
        "n_evaluated_examples": len(examples),
        "dropped_visits_without_images": None if bank is None else bank.dropped,
        "fold_sizes": plan.fold_sizes(),
        "training": {str(f["fold"]): f["training"] for f in folds},
        "results": results,
    })
    if out is not None:
        write_outputs(report, out)
    return report
