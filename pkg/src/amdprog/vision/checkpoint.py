"""Checkpoint container for :class:`FusionNet`.

Format (version 1): an uncompressed ``.npz`` archive holding one float array
per parameter, keyed by its module path (``tower.0.weight``, ``head.bias``),
plus ``__meta__``: a UTF-8 JSON string with ``format_version``, ``net_config``
(the :class:`NetConfig` fields) and ``dtype``.
"""
from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .net import FusionNet, NetConfig

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: FusionNet, path: str | Path) -> None:
    params = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    meta = {
        "format_version": FORMAT_VERSION,
        "net_config": net.cfg.to_dict(),
        "dtype": str(next(iter(params.values())).dtype),
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **params)


def load_checkpoint(path: str | Path, n_classes: int | None = None) -> FusionNet:
    """Load a checkpoint; ``n_classes`` rejects a head of the wrong width."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            params = {k: z[k] for k in z.files if k != "__meta__"}
    except (OSError, ValueError, KeyError, EOFError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')!r}")
    cfg = NetConfig.from_dict(meta["net_config"])
    if n_classes is not None and cfg.n_classes != n_classes:
        raise CheckpointError(f"checkpoint head has {cfg.n_classes} classes, expected {n_classes}")
    net = FusionNet(cfg)
    if params.get("head.weight") is None or params["head.weight"].shape[0] != cfg.n_classes:
        raise CheckpointError("head shape does not match stored configuration")
    dtype = getattr(torch, meta["dtype"])
    net = net.to(dtype)
    try:
        net.load_state_dict({k: torch.from_numpy(v) for k, v in params.items()})
    except RuntimeError as exc:
        raise CheckpointError(f"parameter shape mismatch: {exc}") from exc
    return net
