"""Mini-batch gradient descent with early stopping on a tuning set."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from ..metrics import auc, roc_curve
from .net import FusionNet, mean_cross_entropy, predict_proba, to_tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 32
    patience: int = 5
    eval_every: int = 1
    max_epochs: int = 50
    momentum: float = 0.0
    # None: every example once per epoch; n: n visits drawn per eye per epoch
    visits_per_eye: int | None = None


@dataclass
class PairSet:
    """Stacked stereo pairs (uint8, (N, H, W, 3)) with integer class labels.

    ``groups`` holds an eye index per pair, used for per-eye epoch sampling.
    """

    left: np.ndarray
    right: np.ndarray
    labels: np.ndarray
    groups: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "PairSet":
        g = None if self.groups is None else self.groups[idx]
        return PairSet(self.left[idx], self.right[idx], self.labels[idx], g)


@dataclass
class TrainState:
    seed: int
    epoch: int = 0
    best_metric: float = -np.inf
    best_epoch: int = 0
    patience_left: int = 0
    stopped_early: bool = False
    history: list[float] = field(default_factory=list)
    best_params: dict | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "epoch": self.epoch,
            "best_metric": self.best_metric,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "history": self.history,
        }


def tuning_metric(net: FusionNet, tune: PairSet, monitor: str) -> float:
    proba = predict_proba(net, tune.left, tune.right)
    if monitor == "auc":
        return auc(roc_curve(proba[:, 1], tune.labels == 1))
    # mean log-likelihood of the fused output, higher is better
    p = proba[np.arange(len(tune)), tune.labels]
    return float(np.mean(np.log(np.maximum(p, 1e-300))))


def _epoch_order(train: PairSet, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.visits_per_eye is None or train.groups is None:
        return rng.permutation(len(train))
    # draw visits per eye, then shuffle the draw
    order = np.argsort(train.groups, kind="stable")
    g = train.groups[order]
    starts = np.r_[0, np.flatnonzero(g[1:] != g[:-1]) + 1]
    sizes = np.diff(np.r_[starts, len(g)])
    picks = [starts + rng.integers(0, sizes) for _ in range(cfg.visits_per_eye)]
    return rng.permutation(order[np.concatenate(picks)])


def train(net: FusionNet, train_set: PairSet, tune_set: PairSet, cfg: TrainConfig = TrainConfig(),
          seed: int = 0, monitor: str = "auc") -> tuple[FusionNet, TrainState]:
    """Train in place and return the best snapshot (by tuning metric) loaded into ``net``."""
    if len(train_set) == 0 or len(tune_set) == 0:
        raise ValueError("training and tuning sets must be non-empty")
    if monitor == "auc" and len(np.unique(tune_set.labels)) < 2:
        raise ValueError("tuning set has a single class; AUC cannot be monitored")
    rng = np.random.default_rng(seed)
    dtype = next(net.parameters()).dtype
    opt = torch.optim.SGD(net.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    state = TrainState(seed=seed, patience_left=cfg.patience)
    labels_t = torch.as_tensor(train_set.labels, dtype=torch.long)

    while state.epoch < cfg.max_epochs:
        net.train()
        order = _epoch_order(train_set, cfg, rng)
        for i in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[i : i + cfg.batch_size])
            a = to_tensor(train_set.left[idx], dtype)
            b = to_tensor(train_set.right[idx], dtype)
            opt.zero_grad(set_to_none=True)
            mean_cross_entropy(net, a, b, labels_t[idx]).backward()
            opt.step()
        state.epoch += 1
        if state.epoch % cfg.eval_every:
            continue
        metric = tuning_metric(net, tune_set, monitor)
        state.history.append(metric)
        log.debug("epoch %d tuning %s %.4f", state.epoch, monitor, metric)
        if metric > state.best_metric:
            state.best_metric = metric
            state.best_epoch = state.epoch
            state.best_params = copy.deepcopy(net.state_dict())
            state.patience_left = cfg.patience
        else:
            state.patience_left -= 1
            if state.patience_left <= 0:
                state.stopped_early = True
                break
    if state.best_params is not None:
        net.load_state_dict(state.best_params)
    return net, state
