"""Run configuration: one YAML file, every seed explicit.

Example::

    dataset: data/visits.jsonl
    k: 10
    seeds: {fold: 0, sampling: 0, training: 0, synthesis: 0}
    predictors: [manual4, manual9, end_to_end]
    cohorts: [none_early_iamd, iamd]
    target_specificity: 0.8
    n_samples: 100
    horizon: {horizon_days: 365, window_lo_days: 270, window_hi_days: 455}
    vision:
      net: {in_size: 64, widths: [8, 16, 16], kernel: 3}
      train: {lr: 0.01, batch_size: 32, patience: 5, max_epochs: 50}
    synth: {preset: planted_signal, n_patients: 2000}
    out: runs/planted
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .labeling import Cohort, HorizonConfig
from .predictors import PREDICTORS
from .synthgen import PRESETS, GenConfig
from .vision.net import NetConfig
from .vision.train import TrainConfig


# fields that never change results; left out of the hash and of metrics.json
EXECUTION_ONLY = ("out", "workers")


@dataclass(frozen=True)
class Seeds:
    fold: int = 0
    sampling: int = 0
    training: int = 0
    synthesis: int = 0


@dataclass(frozen=True)
class VisionConfig:
    net: NetConfig = NetConfig()
    train: TrainConfig = TrainConfig()
    luminance_threshold: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    horizon: HorizonConfig = HorizonConfig()
    k: int = 10
    seeds: Seeds = Seeds()
    predictors: tuple[str, ...] = ("manual4", "manual9")
    cohorts: tuple[str, ...] = ("none_early_iamd", "iamd")
    target_specificity: float = 0.80
    n_samples: int = 100
    lr_l2: float = 1e-4
    lr_tol: float = 1e-8
    lr_max_iters: int = 10000
    vision: VisionConfig = VisionConfig()
    synth: GenConfig = field(default_factory=lambda: PRESETS["default"])
    workers: int = 1
    torch_threads: int = 1
    out: str = "runs/latest"

    def __post_init__(self):
        bad = [p for p in self.predictors if p not in PREDICTORS]
        if bad:
            raise ValueError(f"unknown predictors {bad}; choose from {list(PREDICTORS)}")
        for c in self.cohorts:
            Cohort(c)
        if not 0.0 < self.target_specificity < 1.0:
            raise ValueError("target_specificity must be in (0, 1)")
        if self.k < 3:
            raise ValueError("k must be >= 3")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["predictors"] = list(self.predictors)
        d["cohorts"] = list(self.cohorts)
        d["vision"]["net"] = self.vision.net.to_dict()
        d["synth"] = self.synth.to_dict()
        return d

    def config_hash(self) -> str:
        """Hash of everything that can change results (not the output directory or worker count)."""
        d = self.provenance()
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def provenance(self) -> dict:
        d = self.to_dict()
        for key in EXECUTION_ONLY:
            d.pop(key)
        return d

    @property
    def image_predictors(self) -> list[str]:
        return [p for p in self.predictors if p.startswith(("twophase", "end_to_end"))]


def _build(cls, d: dict | None, where: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    return d


def from_dict(d: dict) -> RunConfig:
    d = _build(RunConfig, d, "config")
    if "horizon" in d:
        d["horizon"] = HorizonConfig(**_build(HorizonConfig, d["horizon"], "horizon"))
    if "seeds" in d:
        d["seeds"] = Seeds(**_build(Seeds, d["seeds"], "seeds"))
    if "vision" in d:
        v = dict(d["vision"] or {})
        net = v.pop("net", None)
        tr = v.pop("train", None)
        v = _build(VisionConfig, v, "vision")
        if net is not None:
            v["net"] = NetConfig.from_dict({**NetConfig().to_dict(), **_build(NetConfig, net, "vision.net")})
        if tr is not None:
            v["train"] = TrainConfig(**_build(TrainConfig, tr, "vision.train"))
        d["vision"] = VisionConfig(**v)
    if "synth" in d:
        s = dict(d["synth"] or {})
        preset = s.pop("preset", "default")
        if preset not in PRESETS:
            raise ValueError(f"unknown synth preset {preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[preset].to_dict()
        d["synth"] = GenConfig.from_dict({**base, **_build(GenConfig, s, "synth")})
    for key in ("predictors", "cohorts"):
        if key in d:
            d[key] = tuple(d[key])
    cfg = RunConfig(**d)
    # the synthesis seed lives in one place
    return replace(cfg, synth=replace(cfg.synth, seed=cfg.seeds.synthesis))


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return from_dict({})
    with open(path, encoding="utf-8") as fh:
        return from_dict(yaml.safe_load(fh) or {})


def with_overrides(cfg: RunConfig, **seeds: int | None) -> RunConfig:
    """Replace named seeds (``fold``, ``sampling``, ``training``, ``synthesis``) that are not None."""
    given = {k: v for k, v in seeds.items() if v is not None}
    if not given:
        return cfg
    new = replace(cfg, seeds=replace(cfg.seeds, **given))
    return replace(new, synth=replace(new.synth, seed=new.seeds.synthesis))
