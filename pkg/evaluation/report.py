"""Per-seizure results, per-patient aggregation and the report JSON."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from rich.table import Table

from shared.console import console
from shared.errors import DataError


@dataclass
class FoldResult:
    fold: int
    seizure_index: int
    onset_s: float
    detected_in_crossing: bool
    detected: bool
    latency_s: float | None
    rpip_error: float
    pip_error: float
    n_false: int
    interictal_hours: float
    best_epoch: int = 0

    @property
    def fdr_per_h(self):
        return self.n_false / self.interictal_hours if self.interictal_hours > 0 else 0.0


@dataclass
class EvalReport:
    patient: str
    n_detected_crossing: int
    n_total: int
    n_false: int
    interictal_hours: float
    rpip_errors: list
    latencies_s: list
    fdr_per_h: list

    @classmethod
    def from_folds(cls, patient, folds):
        folds = sorted(folds, key=lambda f: f.fold)
        return cls(
            patient=patient,
            n_detected_crossing=sum(1 for f in folds if f.detected_in_crossing),
            n_total=len(folds),
            n_false=sum(f.n_false for f in folds),
            interictal_hours=max((f.interictal_hours for f in folds), default=0.0),
            rpip_errors=[f.rpip_error for f in folds],
            latencies_s=[f.latency_s for f in folds],
            fdr_per_h=[f.fdr_per_h for f in folds],
        )


def _mean_sd(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))


def aggregate(report):
    """Table row: sensitivity as "N_DC/N_T", mean and population sd of the
    RPIP error, latency and FDR. Undetected seizures are left out of the
    latency statistics and counted separately."""
    rpip_mean, rpip_sd = _mean_sd(report.rpip_errors)
    detected = [v for v in report.latencies_s if v is not None]
    lat_mean, lat_sd = _mean_sd(detected)
    fdr_mean, fdr_sd = _mean_sd(report.fdr_per_h)
    return {
        "patient": report.patient,
        "sensitivity": f"{report.n_detected_crossing}/{report.n_total}",
        "sensitivity_defined": report.n_total > 0,
        "rpip_err_mean": rpip_mean,
        "rpip_err_sd": rpip_sd,
        "latency_mean_s": lat_mean,
        "latency_sd_s": lat_sd,
        "fdr_mean": fdr_mean,
        "fdr_sd": fdr_sd,
        "n_undetected": len(report.latencies_s) - len(detected),
        "n_false": report.n_false,
        "interictal_hours": report.interictal_hours,
    }


REPORT_SCHEMA = {
    "patient": (str,),
    "sensitivity": (str,),
    "sensitivity_defined": (bool,),
    "rpip_err_mean": (float, int, type(None)),
    "rpip_err_sd": (float, int, type(None)),
    "latency_mean_s": (float, int, type(None)),
    "latency_sd_s": (float, int, type(None)),
    "fdr_mean": (float, int, type(None)),
    "fdr_sd": (float, int, type(None)),
    "n_undetected": (int,),
}


def validate_report(row):
    if not isinstance(row, dict):
        raise DataError("report row must be an object")
    for key, types in REPORT_SCHEMA.items():
        if key not in row:
            raise DataError(f"report row missing '{key}'")
        value = row[key]
        if isinstance(value, bool) and bool not in types:
            raise DataError(f"'{key}' must not be a boolean")
        if not isinstance(value, types):
            raise DataError(f"'{key}' has type {type(value).__name__}")
    parts = row["sensitivity"].split("/")
    if len(parts) != 2 or not all(p.isdigit() for p in parts) or int(parts[0]) > int(parts[1]):
        raise DataError(f"sensitivity '{row['sensitivity']}' is not N_DC/N_T")
    return row


def write_report(path, row, folds=None):
    validate_report(row)
    document = {"summary": row, "folds": [asdict(f) for f in (folds or [])]}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        json.dump(document, f, indent=2)
    return path


def read_report(path):
    try:
        with open(path, 'r') as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read report {path}: {e}")
    validate_report(document.get("summary"))
    return document


def _fmt(mean, sd, digits=2):
    if mean is None:
        return "-"
    return f"{mean:.{digits}f} ± {sd:.{digits}f}"


def print_summary(row, folds=None):
    table = Table(title=f"Patient {row['patient']}")
    table.add_column("Sensitivity")
    table.add_column("RPIP error (%)")
    table.add_column("Latency (s)")
    table.add_column("FDR (/h)")
    table.add_row(
        row["sensitivity"],
        _fmt(row["rpip_err_mean"], row["rpip_err_sd"]),
        _fmt(row["latency_mean_s"], row["latency_sd_s"]),
        _fmt(row["fdr_mean"], row["fdr_sd"]),
    )
    console.print(table)

    if folds:
        detail = Table(title="Folds")
        for name in ("fold", "onset (s)", "in crossing", "latency (s)", "RPIP err (%)", "false alarms"):
            detail.add_column(name)
        for f in sorted(folds, key=lambda f: f.fold):
            detail.add_row(
                str(f.fold), f"{f.onset_s:.1f}", "yes" if f.detected_in_crossing else "no",
                "-" if f.latency_s is None else f"{f.latency_s:.1f}",
                f"{f.rpip_error:.2f}", str(f.n_false),
            )
        console.print(detail)
