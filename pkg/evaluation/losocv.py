"""Leave-one-seizure-out cross-validation for one patient.

Each seizure is held out once, together with its share of interictal data
(the interictal segments between the previous seizure and it; the trailing
interictal tail belongs to the last seizure). The model trained on the rest
is streamed over the whole recording. The held-out seizure is scored on its
crossing window and every fold is charged the full interictal record for
false detections.
"""
from __future__ import annotations

import bisect
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from detector.detector import DetectorConfig
from detector.stream import PipPredictor, predict_pips, run_detector, write_trace
from evaluation.metrics import (
    count_false_alarms, interictal_periods, pip_error, rpip_error, score_seizure, total_hours,
)
from evaluation.report import EvalReport, FoldResult, aggregate
from features.labeling import featurize_segments
from model.trainer import TrainConfig, train
from recordings.signal_io import TAG_INTERICTAL, OverlapPolicy, extract_segments
from shared.config import FOLD_WORKERS, SEGMENT_S
from shared.console import log
from shared.errors import DataError


@dataclass
class PatientData:
    patient: str
    recording: object
    len_s: float = SEGMENT_S
    policy: OverlapPolicy = field(default_factory=OverlapPolicy)


@dataclass
class LosocvResult:
    folds: list
    report: EvalReport
    summary: dict
    traces: dict = field(default_factory=dict)
    train_results: list = field(default_factory=list)


def fold_plan(n_seizures):
    """Fold k holds out seizure k."""
    if n_seizures < 2:
        raise DataError(f"leave-one-seizure-out needs at least 2 seizures, got {n_seizures}")
    return list(range(n_seizures))


def fold_groups(dataset, onsets):
    """Fold each labeled segment belongs to."""
    groups = np.empty(len(dataset), dtype=np.intp)
    last = len(onsets) - 1
    for i, (tag, seizure, start) in enumerate(zip(dataset.tags, dataset.seizure_index, dataset.start_s)):
        if tag == TAG_INTERICTAL:
            groups[i] = min(bisect.bisect_right(onsets, start), last)
        else:
            groups[i] = seizure
    return groups


def losocv(patient, spectral_cfg, model_cfg, train_cfg=None, det_cfg=None, workers=FOLD_WORKERS, out_dir=None):
    train_cfg = train_cfg or TrainConfig()
    det_cfg = det_cfg or DetectorConfig()
    rec = patient.recording
    plan = fold_plan(len(rec.annotations))
    onsets = [span.onset_s for span in rec.annotations]

    pairs = extract_segments(rec, patient.len_s, patient.policy)
    dataset = featurize_segments(pairs, spectral_cfg)
    groups = fold_groups(dataset, onsets)
    log('LOSOCV', f"patient {patient.patient}: {len(dataset)} labeled segments, {len(plan)} folds")

    def fit(fold):
        train_set = dataset.subset(np.flatnonzero(groups != fold))
        history_path = os.path.join(out_dir, f"fold{fold}_history.csv") if out_dir else None
        log('LOSOCV', f"fold {fold}: training on {len(train_set)} segments")
        return train(train_set, model_cfg, train_cfg, history_path=history_path)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(fit, plan))

    predictors = [PipPredictor(r.params, model_cfg, spectral_cfg) for r in results]
    times, pips = predict_pips(rec, predictors, det_cfg.rate, patient.len_s)
    periods = interictal_periods(rec, patient.len_s, patient.policy.postictal_s)
    hours = total_hours(periods)

    folds, traces = [], {}
    for fold in plan:
        span = rec.annotations[fold]
        trace, alarms = run_detector(times, pips[fold], det_cfg)
        score = score_seizure(trace, span, patient.len_s, det_cfg.rate)
        folds.append(FoldResult(
            fold=fold,
            seizure_index=fold,
            onset_s=span.onset_s,
            detected_in_crossing=score.detected_in_crossing,
            detected=score.detected,
            latency_s=score.latency_s,
            rpip_error=rpip_error(trace, span, patient.len_s),
            pip_error=pip_error(trace, span, patient.len_s),
            n_false=count_false_alarms(alarms, periods),
            interictal_hours=hours,
            best_epoch=results[fold].best_epoch,
        ))
        traces[fold] = trace
        if out_dir:
            write_trace(trace, os.path.join(out_dir, f"fold{fold}_trace.csv"))
        log('LOSOCV', f"fold {fold}: latency {score.latency_s} s, {folds[-1].n_false} false alarm(s)")

    report = EvalReport.from_folds(patient.patient, folds)
    return LosocvResult(folds, report, aggregate(report), traces, results)
