"""Tie-aware ROC/AUC, interpolated operating points and one-visit-per-eye resampling.

Scores are "higher = more likely to progress"; a threshold ``t`` classifies
``score >= t`` as positive. ROC vertices sit at distinct score values so tied
scores never get an arbitrary internal ordering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .labeling import group_by_eye, sample_one_per_eye

# vertices this close to the target fpr are treated as hitting it exactly
FPR_TOL = 1e-12


@dataclass(frozen=True)
class ScoredExample:
    eye_key: tuple
    score: float
    label: bool
    day: int = 0

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score for {self.eye_key}")


@dataclass(frozen=True)
class RocCurve:
    """Vertices from (0, 0) to (1, 1); ``thresholds[i]`` produces vertex ``i``.

    ``thresholds[0]`` is ``+inf`` (nothing classified positive).
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return [(float(f), float(t)) for f, t in zip(self.fpr, self.tpr)]

    def __len__(self) -> int:
        return len(self.fpr)


@dataclass(frozen=True)
class OperatingRule:
    """Randomized threshold rule hitting a target specificity exactly.

    With probability ``1 - w`` classify by ``score >= t_hi``, otherwise by
    ``score >= t_lo`` (``t_lo <= t_hi``). ``w == 0`` is plain thresholding.
    """

    t_hi: float
    t_lo: float
    w: float
    target_specificity: float

    def to_dict(self) -> dict:
        def enc(t):
            return None if not math.isfinite(t) else float(t)

        return {"t_hi": enc(self.t_hi), "t_lo": enc(self.t_lo), "w": float(self.w),
                "target_specificity": self.target_specificity}


def roc_curve(scores, labels, weights=None) -> RocCurve:
    """ROC with one vertex per distinct score. Optional per-example weights."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    wt = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float)
    pos_total = wt[y].sum()
    neg_total = wt[~y].sum()
    if not y.any() or y.all() or pos_total <= 0 or neg_total <= 0:
        raise ValueError("ROC needs at least one positive and one negative")

    order = np.argsort(-s, kind="stable")
    s, y, wt = s[order], y[order], wt[order]
    tp = np.cumsum(np.where(y, wt, 0.0))
    fp = np.cumsum(np.where(y, 0.0, wt))
    # last index of every tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    fpr = np.r_[0.0, fp[ends] / neg_total]
    tpr = np.r_[0.0, tp[ends] / pos_total]
    fpr[-1] = tpr[-1] = 1.0
    # guard against cumulative-sum drift with weights
    fpr = np.minimum(np.maximum.accumulate(fpr), 1.0)
    tpr = np.minimum(np.maximum.accumulate(tpr), 1.0)
    return RocCurve(fpr, tpr, np.r_[np.inf, s[ends]])


def auc(curve: RocCurve) -> float:
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def _bracket(curve: RocCurve, f: float) -> tuple[int, float]:
    """Last vertex with fpr <= f and the weight towards the next vertex."""
    a = int(np.searchsorted(curve.fpr, f + FPR_TOL, side="right")) - 1
    if abs(curve.fpr[a] - f) <= FPR_TOL or a == len(curve) - 1:
        return a, 0.0
    return a, float((f - curve.fpr[a]) / (curve.fpr[a + 1] - curve.fpr[a]))


def interp_tpr(curve: RocCurve, f: float) -> float:
    """TPR of the linearly interpolated curve at fpr ``f`` (upper envelope on vertical runs)."""
    a, w = _bracket(curve, f)
    if w == 0.0:
        return float(curve.tpr[a])
    return float((1 - w) * curve.tpr[a] + w * curve.tpr[a + 1])


def operating_rule(curve: RocCurve, target_specificity: float = 0.80) -> OperatingRule:
    if not 0.0 < target_specificity < 1.0:
        raise ValueError(f"target specificity must be in (0, 1), got {target_specificity}")
    a, w = _bracket(curve, 1.0 - target_specificity)
    t_hi = float(curve.thresholds[a])
    t_lo = t_hi if w == 0.0 else float(curve.thresholds[a + 1])
    return OperatingRule(t_hi, t_lo, w, target_specificity)


def _rate(mask_scores: np.ndarray, t: float) -> float:
    if mask_scores.size == 0:
        return math.nan
    return float(np.count_nonzero(mask_scores >= t)) / mask_scores.size


def evaluate_rule(scores, labels, rule: OperatingRule) -> tuple[float, float]:
    """Expected (sensitivity, specificity) of the randomized rule, in closed form.

    Either value is NaN when its class is absent.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    pos, neg = s[y], s[~y]
    w = rule.w
    sens = (1 - w) * _rate(pos, rule.t_hi) + (w * _rate(pos, rule.t_lo) if w else 0.0)
    fpr = (1 - w) * _rate(neg, rule.t_hi) + (w * _rate(neg, rule.t_lo) if w else 0.0)
    return float(sens), float(1.0 - fpr)


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n - 1 denominator)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError(f"aggregate needs at least 2 values, got {v.size}")
    return float(v.mean()), float(v.std(ddof=1))


def stable_mean(values: Iterable[float]) -> float:
    """NaN-skipping mean that returns ``x`` exactly when every value equals ``x``."""
    v = [x for x in values if not math.isnan(x)]
    if not v:
        return math.nan
    return float(v[0] + math.fsum(x - v[0] for x in v) / len(v))


class _Packed:
    """Scored examples grouped by eye in canonical order, flattened."""

    def __init__(self, scored: Iterable[ScoredExample]):
        groups = group_by_eye(scored)
        if not groups:
            raise ValueError("no scored examples")
        for k, g in groups.items():
            g.sort(key=lambda e: (e.day, e.score, e.label))
        self.keys = list(groups)
        self.sizes = np.array([len(g) for g in groups.values()], dtype=np.int64)
        self.offsets = np.r_[0, np.cumsum(self.sizes)[:-1]]
        flat = [e for g in groups.values() for e in g]
        self.scores = np.array([e.score for e in flat], dtype=float)
        self.labels = np.array([e.label for e in flat], dtype=bool)

    @property
    def n_eyes(self) -> int:
        return len(self.keys)

    def draws(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        """Flat example indices, shape (n_samples, n_eyes), one visit per eye per row."""
        return self.offsets + sample_one_per_eye(self.sizes, n_samples, rng)


def averaged_roc(packed: _Packed, idx: np.ndarray) -> RocCurve:
    """ROC whose fpr/tpr at each threshold are the means over draws (single-class draws dropped)."""
    y = packed.labels[idx]
    n_pos = y.sum(axis=1)
    n_neg = y.shape[1] - n_pos
    valid = (n_pos > 0) & (n_neg > 0)
    if not valid.any():
        raise ValueError("every draw is single-class; no ROC can be formed")
    idx, y = idx[valid], y[valid]
    n_valid = int(valid.sum())
    wpos = 1.0 / (n_valid * n_pos[valid])
    wneg = 1.0 / (n_valid * n_neg[valid])
    weights = np.where(y, wpos[:, None], wneg[:, None])
    return roc_curve(packed.scores[idx].ravel(), y.ravel(), weights.ravel())


@dataclass(frozen=True)
class FoldMetrics:
    auc: float
    sensitivity: float
    specificity: float
    rule: OperatingRule
    auc_skipped: int
    n_samples: int
    n_eyes: int
    n_examples: int
    test_roc: RocCurve | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "auc_skipped_draws": self.auc_skipped,
            "n_samples": self.n_samples,
            "n_eyes": self.n_eyes,
            "n_examples": self.n_examples,
            "rule": self.rule.to_dict(),
        }


def tuning_rule(tune: Iterable[ScoredExample], n_samples: int = 100,
                target_specificity: float = 0.80, seed: int = 0) -> OperatingRule:
    """Operating rule from the draw-averaged ROC of the tuning examples."""
    packed = _Packed(tune)
    idx = packed.draws(n_samples, np.random.default_rng([seed, 0]))
    return operating_rule(averaged_roc(packed, idx), target_specificity)


def resampled_metrics(test: Iterable[ScoredExample], tune: Iterable[ScoredExample],
                      n_samples: int = 100, target_specificity: float = 0.80,
                      seed: int = 0) -> FoldMetrics:
    """Fold-level AUC, sensitivity and specificity averaged over one-visit-per-eye draws.

    The rule is fit once on the tuning examples; draws whose test sample holds
    a single class contribute no AUC (counted in ``auc_skipped``).
    """
    rule = tuning_rule(tune, n_samples, target_specificity, seed)
    packed = _Packed(test)
    idx = packed.draws(n_samples, np.random.default_rng([seed, 1]))
    aucs, sens, spec = [], [], []
    skipped = 0
    for row in idx:
        s, y = packed.scores[row], packed.labels[row]
        if y.any() and not y.all():
            aucs.append(auc(roc_curve(s, y)))
        else:
            skipped += 1
        se, sp = evaluate_rule(s, y, rule)
        sens.append(se)
        spec.append(sp)
    try:
        test_roc = averaged_roc(packed, idx)
    except ValueError:
        test_roc = None
    return FoldMetrics(
        auc=stable_mean(aucs),
        sensitivity=stable_mean(sens),
        specificity=stable_mean(spec),
        rule=rule,
        auc_skipped=skipped,
        n_samples=n_samples,
        n_eyes=packed.n_eyes,
        n_examples=len(packed.scores),
        test_roc=test_roc,
    )


def quartile_blocks(n: int) -> list[int]:
    """Sizes of 4 contiguous rank blocks; remainders go to the lower quartiles."""
    q, r = divmod(n, 4)
    return [q + (1 if b < r else 0) for b in range(4)]


def _quartiles_of(scores: np.ndarray, labels: np.ndarray, eye_rank: np.ndarray) -> np.ndarray:
    order = np.lexsort((eye_rank, scores))
    y = labels[order].astype(float)
    out = np.empty(4)
    start = 0
    for b, size in enumerate(quartile_blocks(len(y))):
        out[b] = y[start : start + size].mean()
        start += size
    return out


@dataclass(frozen=True)
class QuartileRates:
    rates: tuple[float, float, float, float]
    baseline: float
    skipped: int


def quartile_rates(scored: Iterable[ScoredExample], n_samples: int = 100, seed: int = 0,
                   resample: bool = True) -> QuartileRates:
    """Positive rate per score quartile (quartile 4 = highest scores), averaged over draws.

    ``baseline`` is the mean positive rate of the same draws.
    """
    packed = _Packed(scored)
    eye_rank = np.repeat(np.arange(packed.n_eyes), packed.sizes)
    if resample:
        idx = packed.draws(n_samples, np.random.default_rng([seed, 2]))
    else:
        idx = np.arange(len(packed.scores))[None, :]
    rows, base = [], []
    skipped = 0
    for row in idx:
        if len(row) < 4:
            skipped += 1
            continue
        rows.append(_quartiles_of(packed.scores[row], packed.labels[row], eye_rank[row]))
        base.append(packed.labels[row].mean())
    if not rows:
        return QuartileRates((math.nan,) * 4, math.nan, skipped)
    rates = tuple(stable_mean(col) for col in np.array(rows).T)
    return QuartileRates(rates, stable_mean(base), skipped)


def mean_roc(curves: Sequence[RocCurve], grid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vertical average of several curves on a common fpr grid."""
    grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=float)
    tpr = np.array([[interp_tpr(c, f) for f in grid] for c in curves])
    return grid, tpr.mean(axis=0)
