"""Patients, eyes, visits and the two AMD grading scales.

One record is one visit of one eye. Records are grouped into per-eye series
(sorted by day) and the series into an immutable :class:`Dataset`.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

EYES = ("OD", "OS")
CSV_FIELDS = ("patient_id", "eye", "day", "grade4", "step", "left_img", "right_img")


class Grade4(enum.Enum):
    """4-category scale with the advanced category split into CGA and nvAMD."""

    NONE = "none"
    EARLY = "early"
    INTERMEDIATE = "intermediate"
    CGA = "cga"
    NVAMD = "nvamd"

    @property
    def is_advanced(self) -> bool:
        return self in (Grade4.CGA, Grade4.NVAMD)

    @property
    def rank(self) -> int:
        """Ordinal rank; only defined for non-advanced grades."""
        if self.is_advanced:
            raise ValueError(f"{self.value} has no ordinal rank")
        return _RANK[self]

    @property
    def index(self) -> int:
        """Zero-based class index over all five values."""
        return _ORDER.index(self)


_ORDER = list(Grade4)
_RANK = {Grade4.NONE: 0, Grade4.EARLY: 1, Grade4.INTERMEDIATE: 2}


def is_advanced_step(step: int) -> bool:
    return step >= 10


def grade4_consistent(grade4: Grade4, step: int) -> bool:
    if not 1 <= step <= 12:
        return False
    if grade4 is Grade4.CGA:
        return step == 10
    if grade4 is Grade4.NVAMD:
        return step in (11, 12)
    return step <= 9


class CohortError(ValueError):
    pass


class RecordError(CohortError):
    """A malformed record; carries the 1-based line number and field name."""

    def __init__(self, line: int, field_name: str, message: str):
        self.line = line
        self.field = field_name
        super().__init__(f"line {line}: field {field_name!r}: {message}")


class ConsistencyError(CohortError):
    pass


class DuplicateVisitError(CohortError):
    pass


@dataclass(frozen=True)
class VisitRecord:
    patient_id: str
    eye: str
    day: int
    grade4: Grade4
    step: int
    left_img: str | None = None
    right_img: str | None = None

    def __post_init__(self):
        if self.eye not in EYES:
            raise CohortError(f"laterality must be OD or OS, got {self.eye!r}")
        if self.day < 0:
            raise CohortError(f"visit day must be >= 0, got {self.day}")
        if not grade4_consistent(self.grade4, self.step):
            raise ConsistencyError(
                f"inconsistent grades at {self.key}: grade4={self.grade4.value} step={self.step}"
            )

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

    def to_record(self) -> dict:
        rec = {
            "patient_id": self.patient_id,
            "eye": self.eye,
            "day": self.day,
            "grade4": self.grade4.value,
            "step": self.step,
        }
        if self.left_img is not None:
            rec["left_img"] = self.left_img
        if self.right_img is not None:
            rec["right_img"] = self.right_img
        return rec


@dataclass(frozen=True)
class EyeSeries:
    patient_id: str
    eye: str
    visits: tuple[VisitRecord, ...]

    def __post_init__(self):
        for v in self.visits:
            if (v.patient_id, v.eye) != (self.patient_id, self.eye):
                raise CohortError(f"visit {v.key} does not belong to eye {self.key}")
        for a, b in zip(self.visits, self.visits[1:]):
            if b.day <= a.day:
                raise CohortError(f"visit days not strictly increasing in eye {self.key}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.patient_id, self.eye)

    @property
    def steps(self) -> list[int]:
        return [v.step for v in self.visits]

    def __len__(self) -> int:
        return len(self.visits)


@dataclass(frozen=True)
class Dataset:
    eyes: tuple[EyeSeries, ...] = ()
    patients: Mapping[str, tuple[EyeSeries, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index: dict[str, list[EyeSeries]] = {}
        seen = set()
        for s in self.eyes:
            if s.key in seen:
                raise CohortError(f"duplicate eye {s.key}")
            seen.add(s.key)
            index.setdefault(s.patient_id, []).append(s)
        for pid, eyes in index.items():
            if len(eyes) > 2:
                raise CohortError(f"patient {pid!r} has {len(eyes)} eyes")
        object.__setattr__(self, "patients", {k: tuple(v) for k, v in index.items()})

    @property
    def visits(self) -> list[VisitRecord]:
        return [v for s in self.eyes for v in s.visits]

    @property
    def n_visits(self) -> int:
        return sum(len(s) for s in self.eyes)

    def eye(self, patient_id: str, eye: str) -> EyeSeries:
        for s in self.patients[patient_id]:
            if s.eye == eye:
                return s
        raise KeyError((patient_id, eye))


def from_visits(visits: Iterable[VisitRecord]) -> Dataset:
    """Group visits into sorted per-eye series; rejects duplicate (patient, eye, day)."""
    groups: dict[tuple[str, str], dict[int, VisitRecord]] = {}
    for v in visits:
        days = groups.setdefault(v.eye_key, {})
        if v.day in days:
            raise DuplicateVisitError(f"duplicate visit {v.key}")
        days[v.day] = v
    eyes = [
        EyeSeries(pid, eye, tuple(days[d] for d in sorted(days)))
        for (pid, eye), days in sorted(groups.items())
    ]
    return Dataset(tuple(eyes))


def _parse_record(rec: Mapping, line: int) -> VisitRecord:
    def get(name, required=True):
        val = rec.get(name)
        if val is None or val == "":
            if required:
                raise RecordError(line, name, "missing")
            return None
        return val

    pid = get("patient_id")
    if not isinstance(pid, str):
        pid = str(pid)
    eye = get("eye")
    if eye not in EYES:
        raise RecordError(line, "eye", f"expected OD or OS, got {eye!r}")
    try:
        day = int(get("day"))
    except (TypeError, ValueError):
        raise RecordError(line, "day", f"not an integer: {rec.get('day')!r}") from None
    if day < 0:
        raise RecordError(line, "day", f"negative day {day}")
    try:
        grade4 = Grade4(get("grade4"))
    except ValueError:
        raise RecordError(line, "grade4", f"unknown grade {rec.get('grade4')!r}") from None
    try:
        step = int(get("step"))
    except (TypeError, ValueError):
        raise RecordError(line, "step", f"not an integer: {rec.get('step')!r}") from None
    if not 1 <= step <= 12:
        raise RecordError(line, "step", f"out of range [1, 12]: {step}")
    if not grade4_consistent(grade4, step):
        raise ConsistencyError(
            f"line {line}: inconsistent grades for visit {(pid, eye, day)}: "
            f"grade4={grade4.value} step={step}"
        )
    return VisitRecord(pid, eye, day, grade4, step, get("left_img", False), get("right_img", False))


def _read_jsonl(text: str) -> list[VisitRecord]:
    out = []
    for n, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise RecordError(n, "<record>", f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise RecordError(n, "<record>", "not a JSON object")
        out.append(_parse_record(rec, n))
    return out


def _read_csv(text: str) -> list[VisitRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        return []
    missing = {"patient_id", "eye", "day", "grade4", "step"} - set(reader.fieldnames)
    if missing:
        raise RecordError(1, sorted(missing)[0], "missing from header")
    # header is line 1
    return [_parse_record(row, n) for n, row in enumerate(reader, start=2)]


def ingest(path: str | Path, format: str | None = None) -> Dataset:
    """Read a JSONL or CSV visit file into a validated Dataset."""
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    text = path.read_text(encoding="utf-8")
    if fmt == "jsonl":
        visits = _read_jsonl(text)
    elif fmt == "csv":
        visits = _read_csv(text)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return from_visits(visits)


def export(d: Dataset, path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt == "jsonl":
        lines = [json.dumps(v.to_record()) for v in d.visits]
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    elif fmt == "csv":
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
            writer.writeheader()
            for v in d.visits:
                writer.writerow(v.to_record())
    else:
        raise ValueError(f"unknown format {fmt!r}")


@dataclass(frozen=True)
class SummaryStats:
    n_patients: int
    n_eyes: int
    n_visits: int
    n_stereo_pairs: int
    grade4_hist: dict[str, int]
    step_hist: dict[int, int]
    median_visits_per_eye: float

    def to_dict(self) -> dict:
        return {
            "n_patients": self.n_patients,
            "n_eyes": self.n_eyes,
            "n_visits": self.n_visits,
            "n_stereo_pairs": self.n_stereo_pairs,
            "grade4_hist": self.grade4_hist,
            "step_hist": {str(k): v for k, v in self.step_hist.items()},
            "median_visits_per_eye": self.median_visits_per_eye,
        }


def summary(d: Dataset) -> SummaryStats:
    visits = d.visits
    g4 = Counter(v.grade4.value for v in visits)
    steps = Counter(v.step for v in visits)
    per_eye: Sequence[int] = [len(s) for s in d.eyes]
    return SummaryStats(
        n_patients=len(d.patients),
        n_eyes=len(d.eyes),
        n_visits=len(visits),
        n_stereo_pairs=sum(v.stereo is not None for v in visits),
        grade4_hist={g.value: g4[g.value] for g in Grade4 if g4[g.value]},
        step_hist=dict(sorted(steps.items())),
        median_visits_per_eye=float(statistics.median(per_eye)) if per_eye else 0.0,
    )
