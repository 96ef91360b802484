"""Late-fusion stereo classifier: one shared convolutional tower, softmax outputs averaged."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class NetConfig:
    in_size: int = 64
    widths: tuple[int, ...] = (8, 16, 16)
    kernel: int = 3
    n_classes: int = 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


class FusionNet(nn.Module):
    def __init__(self, cfg: NetConfig = NetConfig()):
        super().__init__()
        self.cfg = cfg
        layers: list[nn.Module] = []
        c_in = 3
        for c_out in cfg.widths:
            layers += [nn.Conv2d(c_in, c_out, cfg.kernel, stride=2, padding=cfg.kernel // 2), nn.ReLU()]
            c_in = c_out
        layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten()]
        self.tower = nn.Sequential(*layers)
        self.head = nn.Linear(c_in, cfg.n_classes)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        """Single-tower logits for a batch shaped (N, 3, H, W) in [0, 1]."""
        return self.head(self.tower(x - 0.5))

    def log_proba(self, left: torch.Tensor, right: torch.Tensor) -> torch.Tensor:
        """Log of the averaged post-softmax outputs, computed stably."""
        la = torch.log_softmax(self.logits(left), dim=1)
        lb = torch.log_softmax(self.logits(right), dim=1)
        return torch.logaddexp(la, lb) - math.log(2.0)

    def forward(self, left: torch.Tensor, right: torch.Tensor) -> torch.Tensor:
        # towers run as two separate calls so swapping inputs swaps identical computations
        pa = torch.softmax(self.logits(left), dim=1)
        pb = torch.softmax(self.logits(right), dim=1)
        return (pa + pb) / 2


def init_net(cfg: NetConfig = NetConfig(), seed: int = 0) -> FusionNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return FusionNet(cfg)


def to_tensor(images, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(N, H, W, 3) uint8 or float array -> (N, 3, H, W) tensor in [0, 1]."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    t = torch.from_numpy(np.ascontiguousarray(arr))
    t = t.to(dtype) / 255.0 if arr.dtype == np.uint8 else t.to(dtype)
    return t.permute(0, 3, 1, 2).contiguous()


def _param_dtype(net: nn.Module) -> torch.dtype:
    return next(net.parameters()).dtype


def _check_size(net: FusionNet, left: np.ndarray, right: np.ndarray) -> None:
    if np.shape(left) != np.shape(right):
        raise ValueError(f"stereo pair shapes differ: {np.shape(left)} vs {np.shape(right)}")
    size = net.cfg.in_size
    if np.shape(left)[-3:-1] != (size, size):
        raise ValueError(f"expected {size}x{size} inputs, got {np.shape(left)[-3:-1]}")


@torch.no_grad()
def predict_proba(net: FusionNet, left, right, batch_size: int = 512) -> np.ndarray:
    """Fused class probabilities for stacked pairs, shape (N, n_classes)."""
    _check_size(net, left, right)
    dtype = _param_dtype(net)
    net.eval()
    out = []
    for i in range(0, len(left), batch_size):
        a = to_tensor(left[i : i + batch_size], dtype)
        b = to_tensor(right[i : i + batch_size], dtype)
        out.append(net(a, b).numpy())
    if not out:
        return np.zeros((0, net.cfg.n_classes))
    return np.concatenate(out).astype(np.float64)


def single_tower_proba(net: FusionNet, images) -> np.ndarray:
    with torch.no_grad():
        return torch.softmax(net.logits(to_tensor(images, _param_dtype(net))), dim=1).numpy()


def mean_cross_entropy(net: FusionNet, left: torch.Tensor, right: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    lp = net.log_proba(left, right)
    return -lp.gather(1, labels.view(-1, 1)).mean()


def loss_and_grad(net: FusionNet, left, right, labels) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy of the fused output and its gradient for every parameter."""
    if len(labels) == 0:
        raise ValueError("empty batch")
    dtype = _param_dtype(net)
    a, b = to_tensor(left, dtype), to_tensor(right, dtype)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    net.zero_grad(set_to_none=True)
    loss = mean_cross_entropy(net, a, b, y)
    loss.backward()
    grads = {name: p.grad.detach().numpy().copy() for name, p in net.named_parameters()}
    return float(loss.item()), grads


def get_flat_params(net: nn.Module) -> np.ndarray:
    return np.concatenate([p.detach().numpy().ravel() for p in net.parameters()])


def set_flat_params(net: nn.Module, flat: np.ndarray) -> None:
    i = 0
    with torch.no_grad():
        for p in net.parameters():
            n = p.numel()
            p.copy_(torch.from_numpy(np.asarray(flat[i : i + n]).reshape(p.shape)).to(p.dtype))
            i += n
