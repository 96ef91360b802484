"""Progression scorers: manual grades, two-phase (mode / logistic regression), end-to-end."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohort import Grade4

PREDICTORS = (
    "manual4",
    "manual9",
    "twophase_mode4",
    "twophase_mode9",
    "twophase_lr4",
    "twophase_lr9",
    "end_to_end",
)
# phase-one class counts: 4-category split form and the extended step scale
N_CLASSES = {"4": len(Grade4), "9": 12}


def manual_grade4_score(e) -> float:
    """Ordinal rank of the 4-category grade (none 0, early 1, intermediate 2)."""
    if e.grade4.is_advanced:
        raise ValueError(f"advanced grade {e.grade4.value} has no manual score")
    return float(e.grade4.rank)


def manual_step_score(e) -> float:
    if e.step >= 10:
        raise ValueError(f"step {e.step} is advanced")
    return float(e.step)


def as_distribution(p, atol: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("distribution must be a non-empty vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > atol:
        raise ValueError("distribution must be non-negative and sum to 1")
    return p


def two_phase_mode_score(dist) -> float:
    """Zero-based index of the most likely class; ties go to the lowest index."""
    return float(np.argmax(np.asarray(dist, dtype=float)))


@dataclass
class LogisticModel:
    """Weights for the features followed by the (unregularized) bias."""

    weights: np.ndarray
    l2: float = 1e-4
    feature_labels: list[str] = field(default_factory=list)
    trained: bool = False
    n_iters: int = 0

    @property
    def dim(self) -> int:
        return len(self.weights) - 1

    def to_json(self) -> str:
        return json.dumps({
            "weights": [float(x) for x in self.weights],
            "l2": self.l2,
            "feature_labels": self.feature_labels,
            "trained": self.trained,
            "n_iters": self.n_iters,
        })

    @classmethod
    def from_json(cls, text: str) -> "LogisticModel":
        obj = json.loads(text)
        w = np.array(obj["weights"], dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite weights")
        return cls(w, obj["l2"], list(obj.get("feature_labels", [])), obj["trained"], obj.get("n_iters", 0))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LogisticModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return np.hstack([X, np.ones((X.shape[0], 1))])


def lr_objective(w: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood plus ``l2/2 * |w|^2`` (bias excluded), and its gradient.

    ``X`` already carries the trailing column of ones.
    """
    z = X @ w
    nll = np.mean(np.logaddexp(0.0, z) - y * z)
    reg = w.copy()
    reg[-1] = 0.0
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    grad = X.T @ (p - y) / len(y) + l2 * reg
    return float(nll + 0.5 * l2 * reg @ reg), grad


def lr_fit(features, labels, l2: float = 1e-4, tol: float = 1e-8, max_iters: int = 10000,
           feature_labels: Sequence[str] = ()) -> LogisticModel:
    """Gradient descent with Armijo backtracking; the trial step doubles after each accepted one."""
    X = _design(features)
    y = np.asarray(labels, dtype=float)
    if X.shape[0] != len(y):
        raise ValueError(f"{X.shape[0]} feature rows but {len(y)} labels")
    if y.min() == y.max():
        raise ValueError("logistic regression needs both classes")
    w = np.zeros(X.shape[1])
    f, g = lr_objective(w, X, y, l2)
    step = 1.0
    it = 0
    for it in range(1, max_iters + 1):
        gg = g @ g
        if np.max(np.abs(g)) < tol:
            break
        t = step
        while True:
            w_new = w - t * g
            f_new, g_new = lr_objective(w_new, X, y, l2)
            if f_new <= f - 0.5 * t * gg or t < 1e-16:
                break
            t *= 0.5
        w, f, g = w_new, f_new, g_new
        step = 2.0 * t
    return LogisticModel(w, l2, list(feature_labels), True, it)


def lr_score(m: LogisticModel, dist) -> float | np.ndarray:
    """Sigmoid of the affine score; vectorized over rows of ``dist``."""
    if not m.trained:
        raise ValueError("logistic model is not trained")
    X = _design(dist)
    if X.shape[1] != len(m.weights):
        raise ValueError(f"feature dimension {X.shape[1] - 1} != model dimension {m.dim}")
    z = X @ m.weights
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    return float(p[0]) if np.ndim(dist) == 1 else p


def end_to_end_score(net, left, right) -> float:
    """Positive-class probability of the late-fusion network for one stereo pair."""
    if left is None or right is None:
        raise ValueError("end-to-end scoring needs both stereo images")
    from .vision.net import predict_proba

    return float(predict_proba(net, np.asarray(left)[None], np.asarray(right)[None])[0, 1])
