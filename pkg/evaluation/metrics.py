"""Event-based metrics: crossing-period detection, latency, probability
errors over the crossing window and false detections per hour."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from detector.stream import alarm_times, run_detector
from features.labeling import GRID_STEP, grid_index
from shared.errors import DataError

TIME_TOL = 1e-9
SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class SeizureScore:
    detected_in_crossing: bool
    latency_s: float | None
    detected: bool


def _covers(trace, start_s, end_s, rate=None):
    if trace.empty:
        return False
    t = trace["t_s"].to_numpy()
    slack = (1.0 / rate) if rate else TIME_TOL
    return t[0] <= start_s + slack and t[-1] >= end_s - slack


def score_seizure(trace, span, len_s, rate=None):
    """First alarm in [onset, onset + len_s] counts as a crossing-period
    detection with latency t_d - onset. A first post-onset alarm later in the
    seizure is charged len_s. No alarm before the offset leaves the seizure
    undetected (latency None)."""
    if not _covers(trace, span.onset_s, span.onset_s + len_s, rate):
        raise DataError(f"trace does not cover the crossing window at {span.onset_s}s")
    alarms = np.asarray(alarm_times(trace), dtype=np.float64)
    after = alarms[(alarms >= span.onset_s - TIME_TOL) & (alarms <= span.offset_s + TIME_TOL)]
    if after.size == 0:
        return SeizureScore(False, None, False)
    t_d = float(after[0])
    if t_d <= span.onset_s + len_s + TIME_TOL:
        return SeizureScore(True, round(t_d - span.onset_s, 9), True)
    return SeizureScore(False, float(len_s), True)


def crossing_rows(trace, span, len_s):
    t = trace["t_s"].to_numpy()
    mask = (t >= span.onset_s - TIME_TOL) & (t < span.onset_s + len_s - TIME_TOL)
    return trace.loc[mask]


def crossing_labels(times, span, len_s):
    """Point-wise P_ictal of the window ending at each time."""
    f = (np.asarray(times, dtype=np.float64) - span.onset_s) / len_s
    return np.array([round(GRID_STEP * grid_index(v), 2) for v in f])


def _probability_error(trace, span, len_s, column, labels):
    rows = crossing_rows(trace, span, len_s)
    if rows.empty:
        raise DataError(f"trace has no samples in the crossing window at {span.onset_s}s")
    if labels is None:
        labels = crossing_labels(rows["t_s"].to_numpy(), span, len_s)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (len(rows),):
        raise DataError(f"{labels.size} labels for {len(rows)} crossing samples")
    return float(np.mean(np.abs(labels - rows[column].to_numpy())) * 100.0)


def rpip_error(trace, span, len_s, labels=None):
    """Mean |P_ictal - RPIP| over the crossing window, in percent."""
    return _probability_error(trace, span, len_s, "rpip", labels)


def pip_error(trace, span, len_s, labels=None):
    return _probability_error(trace, span, len_s, "pip", labels)


def interictal_periods(rec, len_s, postictal_s):
    """[start, end) spans whose alarms are false detections: everything before
    each onset back to the end of the previous postictal window."""
    periods = []
    start = float(len_s)
    for span in rec.annotations:
        if span.onset_s > start:
            periods.append((start, span.onset_s))
        start = max(start, span.offset_s + postictal_s)
    if rec.duration_s > start:
        periods.append((start, rec.duration_s))
    return periods


def total_hours(periods):
    return sum(end - start for start, end in periods) / SECONDS_PER_HOUR


def count_false_alarms(alarms, periods):
    return sum(1 for t in alarms if any(start <= t < end for start, end in periods))


def fdr(alarms, periods):
    hours = total_hours(periods)
    if hours <= 0:
        raise DataError("no interictal time to charge false detections against")
    return count_false_alarms(alarms, periods) / hours


def threshold_sweep(streams, thresholds, det_cfg, len_s):
    """Re-run the decision rule at each threshold over fixed PIP streams.

    streams: iterable of (times, pips, spans, periods). Returns one row per
    threshold with sensitivity (crossing-period detections over seizures),
    FDR per hour and mean latency of crossing detections.
    """
    streams = list(streams)
    rows = []
    for thr in thresholds:
        cfg = det_cfg.with_thr(thr)
        n_total = n_dc = n_false = 0
        hours = 0.0
        latencies = []
        for times, pips, spans, periods in streams:
            trace, alarms = run_detector(times, pips, cfg)
            for span in spans:
                score = score_seizure(trace, span, len_s, cfg.rate)
                n_total += 1
                if score.detected_in_crossing:
                    n_dc += 1
                    latencies.append(score.latency_s)
            n_false += count_false_alarms(alarms, periods)
            hours += total_hours(periods)
        rows.append({
            "thr": thr,
            "sensitivity": n_dc / n_total if n_total else float('nan'),
            "fdr_per_h": n_false / hours if hours > 0 else float('nan'),
            "latency_mean_s": float(np.mean(latencies)) if latencies else float('nan'),
        })
    return pd.DataFrame(rows, columns=["thr", "sensitivity", "fdr_per_h", "latency_mean_s"])
