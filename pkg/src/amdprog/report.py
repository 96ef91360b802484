"""Render metrics.json as the predictor x cohort table plus concatenated CSVs."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .predictors import PREDICTORS

COHORT_TITLES = {"none_early_iamd": "None/Early/iAMD", "iamd": "iAMD"}
ROW_TITLES = {
    "manual4": "4-category manual",
    "manual9": "9-step manual",
    "twophase_mode4": "4-category two-phase (mode)",
    "twophase_mode9": "9-step two-phase (mode)",
    "twophase_lr4": "4-category two-phase (LR)",
    "twophase_lr9": "9-step two-phase (LR)",
    "end_to_end": "Deep learning (end-to-end)",
}


class ReportError(RuntimeError):
    pass


def fmt_auc(agg: dict) -> str:
    return f"{agg['mean']:.2f}±{agg['std']:.2f}"


def fmt_pct(agg: dict) -> str:
    return f"{100 * agg['mean']:.0f}±{100 * agg['std']:.0f}"


def _missing_cells(metrics: dict) -> list[str]:
    cfg = metrics["config"]
    absent = []
    for p in cfg["predictors"]:
        for c in cfg["cohorts"]:
            cell = metrics.get("results", {}).get(p, {}).get(c)
            agg = None if cell is None else cell.get("aggregate")
            if agg is None or any(agg.get(k) is None for k in ("auc", "sensitivity", "specificity")):
                absent.append(f"{p}/{c}")
    return absent


def table_rows(metrics: dict) -> tuple[list[str], list[list[str]]]:
    cfg = metrics["config"]
    cohorts = cfg["cohorts"]
    header = ["Predictor"]
    for c in cohorts:
        t = COHORT_TITLES.get(c, c)
        header += [f"{t} AUC", f"{t} Sensitivity (%)", f"{t} Specificity (%)"]
    order = [p for p in PREDICTORS if p in cfg["predictors"]]
    rows = []
    for p in order:
        row = [ROW_TITLES.get(p, p)]
        for c in cohorts:
            agg = metrics["results"][p][c]["aggregate"]
            row += [fmt_auc(agg["auc"]), fmt_pct(agg["sensitivity"]), fmt_pct(agg["specificity"])]
        rows.append(row)
    return header, rows


def render_text(header: list[str], rows: list[list[str]], config_hash: str) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(x.ljust(w) for x, w in zip(r, widths)) for r in rows]
    lines.append("")
    lines.append(f"mean±std across folds; config_hash={config_hash}")
    return "\n".join(line.rstrip() for line in lines) + "\n"


def _concat_csvs(paths: list[Path]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header_written = False
    for path in paths:
        lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
        reader = csv.reader(lines)
        header = next(reader)
        if not header_written:
            w.writerow(["predictor", "cohort", *header])
            header_written = True
        pred, cohort = _cell_from_name(path)
        for row in reader:
            w.writerow([pred, cohort, *row])
    return buf.getvalue()


def _cell_from_name(path: Path) -> tuple[str, str]:
    stem = path.stem.split("_", 1)[1]
    for c in sorted(COHORT_TITLES, key=len, reverse=True):
        if stem.endswith("_" + c):
            return stem[: -len(c) - 1], c
    return stem, ""


def report(results_dir: str | Path) -> str:
    """Write table.txt, table.csv, roc_all.csv and quartiles_all.csv; return the text table."""
    d = Path(results_dir)
    path = d / "metrics.json"
    if not path.exists():
        raise ReportError(f"no metrics.json in {d}")
    metrics = json.loads(path.read_text())
    absent = _missing_cells(metrics)
    if absent:
        raise ReportError("missing results for: " + ", ".join(absent))
    h = metrics["config_hash"]
    header, rows = table_rows(metrics)
    text = render_text(header, rows, h)
    (d / "table.txt").write_text(text, encoding="utf-8")
    buf = io.StringIO()
    buf.write(f"# config_hash={h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    (d / "table.csv").write_text(buf.getvalue(), encoding="utf-8")
    cfg = metrics["config"]
    for kind in ("roc", "quartiles"):
        paths = [d / f"{kind}_{p}_{c}.csv" for p in cfg["predictors"] for c in cfg["cohorts"]]
        missing = [p.name for p in paths if not p.exists()]
        if missing:
            raise ReportError("missing result files: " + ", ".join(missing))
        (d / f"{kind}_all.csv").write_text(f"# config_hash={h}\n" + _concat_csvs(paths), encoding="utf-8")
    return text
