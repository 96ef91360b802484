"""Grade-reversal filtering, 1-year progression labels and the per-eye adjusted rate."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cohort import Dataset, EyeSeries, Grade4, is_advanced_step


class ProgressionLabel(enum.Enum):
    PROGRESSED = "progressed"
    NOT_PROGRESSED = "not_progressed"
    UNKNOWN = "unknown"


class Cohort(enum.Enum):
    NONE_EARLY_IAMD = "none_early_iamd"
    IAMD = "iamd"


@dataclass(frozen=True)
class HorizonConfig:
    horizon_days: int = 365
    window_lo_days: int = 270
    window_hi_days: int = 455

    def __post_init__(self):
        if not 0 < self.window_lo_days <= self.horizon_days <= self.window_hi_days:
            raise ValueError(
                "need 0 < window_lo_days <= horizon_days <= window_hi_days, got "
                f"{self.window_lo_days}, {self.horizon_days}, {self.window_hi_days}"
            )


@dataclass(frozen=True)
class LabeledExample:
    patient_id: str
    eye: str
    day: int
    grade4: Grade4
    step: int
    label: ProgressionLabel
    left_img: str | None = None
    right_img: str | None = None

    def __post_init__(self):
        if self.grade4.is_advanced:
            raise ValueError(f"advanced eye at visit {self.key} cannot be an example")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.patient_id, self.eye, self.day)

    @property
    def eye_key(self) -> tuple[str, str]:
        return (self.patient_id, self.eye)

    @property
    def stereo(self) -> tuple[str, str] | None:
        if self.left_img is None or self.right_img is None:
            return None
        return (self.left_img, self.right_img)

    @property
    def progressed(self) -> bool:
        return self.label is ProgressionLabel.PROGRESSED

    @property
    def in_none_early_iamd(self) -> bool:
        return self.grade4 in (Grade4.NONE, Grade4.EARLY, Grade4.INTERMEDIATE)

    @property
    def in_iamd(self) -> bool:
        return self.grade4 is Grade4.INTERMEDIATE

    def in_cohort(self, cohort: Cohort | str) -> bool:
        cohort = Cohort(cohort)
        return self.in_iamd if cohort is Cohort.IAMD else self.in_none_early_iamd

    def to_record(self) -> dict:
        rec = {
            "patient_id": self.patient_id,
            "eye": self.eye,
            "day": self.day,
            "grade4": self.grade4.value,
            "step": self.step,
            "label": self.label.value,
            "in_none_early_iamd": self.in_none_early_iamd,
            "in_iamd": self.in_iamd,
        }
        if self.stereo is not None:
            rec["left_img"], rec["right_img"] = self.stereo
        return rec


def exclude_reversals(s: EyeSeries) -> EyeSeries:
    """Drop the first non-advanced visit that follows an advanced one, and everything after."""
    kept = []
    seen_advanced = False
    for v in s.visits:
        advanced = is_advanced_step(v.step)
        if seen_advanced and not advanced:
            break
        seen_advanced |= advanced
        kept.append(v)
    return EyeSeries(s.patient_id, s.eye, tuple(kept))


def derive_label(s: EyeSeries, i: int, h: HorizonConfig = HorizonConfig()) -> ProgressionLabel:
    """Label visit ``i`` of a reversal-filtered series.

    Positive if nvAMD (step 11/12) is graded at any later visit up to
    ``window_hi_days`` after visit ``i``. Negative if instead some later visit
    lands inside ``[window_lo_days, window_hi_days]``. Otherwise unknown.
    """
    if not 0 <= i < len(s.visits):
        raise IndexError(f"visit index {i} out of range for series of length {len(s.visits)}")
    v0 = s.visits[i]
    if is_advanced_step(v0.step):
        raise ValueError(f"visit {v0.key} is already advanced")
    lo = v0.day + h.window_lo_days
    hi = v0.day + h.window_hi_days
    in_window = False
    for v in s.visits[i + 1 :]:
        if v.day > hi:
            break
        if v.step in (11, 12):
            return ProgressionLabel.PROGRESSED
        if v.day >= lo:
            in_window = True
    return ProgressionLabel.NOT_PROGRESSED if in_window else ProgressionLabel.UNKNOWN


def build_examples(d: Dataset, h: HorizonConfig = HorizonConfig()) -> list[LabeledExample]:
    out = []
    for series in d.eyes:
        s = exclude_reversals(series)
        for i, v in enumerate(s.visits):
            if is_advanced_step(v.step):
                continue
            label = derive_label(s, i, h)
            if label is ProgressionLabel.UNKNOWN:
                continue
            out.append(
                LabeledExample(v.patient_id, v.eye, v.day, v.grade4, v.step, label, v.left_img, v.right_img)
            )
    return out


def group_by_eye(examples: Iterable) -> dict[tuple, list]:
    """Group anything with ``eye_key`` and ``day`` by eye, sorted by key then day.

    The canonical order makes downstream sampling independent of input order.
    """
    groups: dict[tuple, list] = {}
    for e in examples:
        groups.setdefault(e.eye_key, []).append(e)
    return {k: sorted(groups[k], key=lambda e: e.day) for k in sorted(groups)}


def sample_one_per_eye(sizes: Sequence[int], n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Index of the sampled visit within each eye, shape (n_samples, n_eyes)."""
    sizes = np.asarray(sizes, dtype=np.int64)
    return rng.integers(0, sizes, size=(n_samples, len(sizes)))


def adjusted_rate(examples: Iterable[LabeledExample], n_samples: int = 100, seed: int = 0) -> float:
    """Mean over draws of the fraction of eyes whose single sampled visit progressed."""
    groups = group_by_eye(examples)
    if not groups:
        raise ValueError("adjusted_rate needs at least one example")
    sizes = [len(g) for g in groups.values()]
    flat = np.array([e.progressed for g in groups.values() for e in g], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    idx = sample_one_per_eye(sizes, n_samples, np.random.default_rng(seed))
    # integer total keeps the single-visit case exactly equal to the plain fraction
    total = int(flat[offsets + idx].sum())
    return total / (n_samples * len(sizes))


def export_examples(examples: Sequence[LabeledExample], path: str | Path) -> None:
    Path(path).write_text("".join(json.dumps(e.to_record()) + "\n" for e in examples), encoding="utf-8")
