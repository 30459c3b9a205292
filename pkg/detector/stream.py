"""Running the decision rule over a whole recording.

Ticks happen at t_k = k / r for k = 1..floor(duration * r). Ticks earlier
than one segment length have no complete window (warm-up) and produce no
trace rows. The window for tick t covers samples
[floor(t * rate) - L, floor(t * rate)).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from detector.detector import Detector
from features.spectral import segment_features
from model.network import predict
from recordings.signal_io import segment_samples
from shared.console import log
from shared.errors import DataError

TRACE_COLUMNS = ["t_s", "pip", "rpip", "ap", "alarm_flag"]


@dataclass
class PipPredictor:
    params: object
    model_cfg: object
    spectral_cfg: object

    def predict_windows(self, windows):
        """(N, channels, samples) raw windows -> (N,) ictal probabilities."""
        if windows.shape[1] != self.model_cfg.channels:
            raise DataError(
                f"recording has {windows.shape[1]} channels, model expects {self.model_cfg.channels}")
        features = segment_features(windows, self.spectral_cfg).tensors
        return predict(features, self.params, self.model_cfg)[:, 1]

    def predict_segment(self, segment):
        return float(self.predict_windows(np.asarray(segment.data)[None])[0])


def tick_indices(duration_s, rate, len_s):
    """k values of the ticks that have a complete trailing window."""
    last = int(math.floor(duration_s * rate + 1e-9))
    first = int(math.ceil(len_s * rate - 1e-9))
    return np.arange(max(first, 1), last + 1)


def warmup_ticks(rate, len_s):
    return int(math.ceil(len_s * rate - 1e-9)) - 1


def window_ends(ticks, rate, rate_hz):
    return np.floor(ticks * rate_hz / rate + 1e-9).astype(np.intp)


def predict_pips(rec, predictors, rate, len_s, batch_size=1024):
    """PIPs of every tick for one or more predictors, featurizing each batch
    of windows once. Returns (times, pips) with pips shaped (n_predictors, n)
    when a list is given, else (n,)."""
    single = not isinstance(predictors, (list, tuple))
    predictors = [predictors] if single else list(predictors)
    n = segment_samples(len_s, rec.rate_hz)
    ticks = tick_indices(rec.duration_s, rate, len_s)
    ends = window_ends(ticks, rate, rec.rate_hz)
    inside = (ends >= n) & (ends <= rec.n_samples)
    ticks, ends = ticks[inside], ends[inside]
    if ends.size == 0:
        raise DataError(f"recording of {rec.duration_s:.1f}s is shorter than one {len_s}s window")

    # (channels, n_starts, n) view over every possible window
    view = sliding_window_view(rec.samples, n, axis=1)
    pips = np.empty((len(predictors), ends.size))
    for i in range(0, ends.size, batch_size):
        starts = ends[i:i + batch_size] - n
        windows = np.ascontiguousarray(view[:, starts].transpose(1, 0, 2))
        features = segment_features(windows, predictors[0].spectral_cfg).tensors
        for j, predictor in enumerate(predictors):
            if windows.shape[1] != predictor.model_cfg.channels:
                raise DataError(
                    f"recording has {windows.shape[1]} channels, model expects {predictor.model_cfg.channels}")
            pips[j, i:i + batch_size] = predict(features, predictor.params, predictor.model_cfg)[:, 1]
        log('DETECT', f"predicted {min(i + batch_size, ends.size)}/{ends.size} windows", level='debug')

    times = ticks / rate
    return times, (pips[0] if single else pips)


def run_detector(times, pips, det_cfg):
    """Feed a PIP stream through a fresh detector. Returns (trace, alarms)."""
    detector = Detector(det_cfg)
    results = detector.run(pips, times)
    trace = pd.DataFrame(
        {
            "t_s": [r.t_s for r in results],
            "pip": [r.pip for r in results],
            "rpip": [r.rpip for r in results],
            "ap": [r.ap for r in results],
            "alarm_flag": [int(r.alarm) for r in results],
        },
        columns=TRACE_COLUMNS,
    )
    return trace, list(detector.state.alarms)


def alarm_times(trace):
    return trace.loc[trace["alarm_flag"] == 1, "t_s"].tolist()


def write_trace(trace, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    trace.to_csv(path, index=False, columns=TRACE_COLUMNS, float_format='%.12g')
    return path


def read_trace(path):
    try:
        trace = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read trace {path}: {e}")
    missing = [c for c in TRACE_COLUMNS if c not in trace.columns]
    if missing:
        raise DataError(f"trace {path} lacks columns {missing}")
    if len(trace) > 1 and not np.all(np.diff(trace["t_s"].to_numpy()) > 0):
        raise DataError(f"trace {path} timestamps are not strictly increasing")
    trace["alarm_flag"] = trace["alarm_flag"].astype(int)
    return trace


def write_alarm_log(alarms, path, meta=None):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        json.dump({"alarms_s": [round(t, 6) for t in alarms], **(meta or {})}, f, indent=2)
    return path
