"""Independent reference implementations used only by the tests.

Each one is written from the definition, deliberately avoiding the code path
it checks (no sorting tricks, no shared helpers from the package).
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def pairwise_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 * P(tie) over all positive/negative pairs."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def threshold_points(scores, labels) -> list[tuple[Fraction, Fraction]]:
    """Exact (fpr, tpr) of ``score >= t`` for t = +inf and every distinct score, by direct counting."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    pts = [(Fraction(0), Fraction(0))]
    for t in sorted(set(scores), reverse=True):
        pts.append((Fraction(sum(n >= t for n in neg), len(neg)), Fraction(sum(p >= t for p in pos), len(pos))))
    return pts


def sensitivity_at_specificity(scores, labels, target_specificity: float) -> float:
    """Interpolated sensitivity at fpr = 1 - target, in exact rational arithmetic.

    Every segment of the threshold polyline whose fpr range holds the target
    proposes a tpr; the largest wins (upper envelope on vertical runs).
    """
    f = 1 - Fraction(str(target_specificity))
    pts = threshold_points(scores, labels)
    cands = []
    for (f0, t0), (f1, t1) in zip(pts, pts[1:]):
        if not f0 <= f <= f1:
            continue
        if f0 == f1:
            cands.append(max(t0, t1))
        else:
            cands.append(t0 + (t1 - t0) * (f - f0) / (f1 - f0))
    if not cands:
        raise ValueError("target fpr not bracketed")
    return float(max(cands))


def mixture_rates(scores, labels, t_hi: float, t_lo: float, w: float) -> tuple[float, float]:
    """(sensitivity, specificity) of the randomized rule, by explicit per-example expectation."""
    tp = fp = 0.0
    n_pos = n_neg = 0
    for s, y in zip(scores, labels):
        p_positive = (1.0 - w) * (s >= t_hi) + w * (s >= t_lo)
        if y:
            tp += p_positive
            n_pos += 1
        else:
            fp += p_positive
            n_neg += 1
    return tp / n_pos, 1.0 - fp / n_neg


def two_pass_mean_std(values) -> tuple[float, float]:
    n = len(values)
    mean = 0.0
    for v in values:
        mean += v
    mean /= n
    ss = 0.0
    for v in values:
        ss += (v - mean) ** 2
    return mean, math.sqrt(ss / (n - 1))


def reversal_prefix(steps) -> int:
    """Length of the kept prefix: cut at the first non-advanced step after an advanced one."""
    for i in range(1, len(steps)):
        if steps[i] < 10 and any(s >= 10 for s in steps[:i]):
            return i
    return len(steps)


def central_difference(f, x: np.ndarray, eps: float) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def logistic_nll(w: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean negative log-likelihood plus l2/2 |w|^2 without the bias, written out per row."""
    total = 0.0
    for xi, yi in zip(X, y):
        z = float(np.dot(xi, w[:-1]) + w[-1])
        p = 1.0 / (1.0 + math.exp(-z))
        total -= yi * math.log(p) + (1 - yi) * math.log(1 - p)
    return total / len(y) + 0.5 * l2 * float(np.dot(w[:-1], w[:-1]))


def render_disk(size: int, cx: float, cy: float, r: float, value: float = 0.8) -> np.ndarray:
    """Bright disk on a black field, pixel centres at i + 0.5."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    img = np.zeros((size, size, 3))
    img[inside] = value
    return img


def square_circle_fit_residual() -> float:
    """Relative RMS residual of the best algebraic circle through a square's perimeter.

    For a square of half-side 1 with points uniform on its edges, the fit is
    centred with r^2 = E[d^2] = 4/3, and E[d] = (sqrt(2) + asinh(1)) / 2.
    """
    r2 = 4.0 / 3.0
    mean_d = (math.sqrt(2.0) + math.asinh(1.0)) / 2.0
    r = math.sqrt(r2)
    return math.sqrt(r2 - 2 * r * mean_d + r2) / r


def fused_nll(net, left, right, labels) -> float:
    """Mean cross-entropy from the averaged probabilities, computed outside the training code path."""
    import torch

    with torch.no_grad():
        p = net(left, right).numpy()
    return float(-np.mean(np.log(p[np.arange(len(labels)), labels])))
