"""Annotated multichannel recordings: canonical files and segmentation.

A recording on disk is a JSON header plus a raw payload of little-endian
float32 samples, frame-interleaved (sample 0 of every channel, then sample
1, ...). The payload sits next to the header with the `.f32` suffix.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from shared.config import POSTICTAL_S
from shared.errors import DataError

HEADER_DTYPE = 'f32le'
HEADER_LAYOUT = 'channel_interleaved'
PAYLOAD_SUFFIX = '.f32'

TAG_INTERICTAL = 'interictal'
TAG_ICTAL = 'ictal'
TAG_CROSSING = 'crossing'
TAG_EXCLUDED = 'excluded'


@dataclass(frozen=True)
class SeizureSpan:
    onset_s: float
    offset_s: float

    def __post_init__(self):
        if self.onset_s < 0:
            raise DataError(f"negative onset {self.onset_s}")
        if self.offset_s <= self.onset_s:
            raise DataError(f"offset before onset ({self.onset_s} -> {self.offset_s})")

    @property
    def duration_s(self):
        return self.offset_s - self.onset_s


@dataclass
class Recording:
    channels: int
    rate_hz: float
    samples: np.ndarray
    annotations: list = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.channels <= 0 or self.rate_hz <= 0:
            raise DataError("channels and rate_hz must be positive")
        if self.samples.ndim != 2 or self.samples.shape[0] != self.channels:
            raise DataError(
                f"samples must be channels x n, got {self.samples.shape} for {self.channels} channels")
        validate_annotations(self.annotations, self.duration_s)

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration_s(self):
        return self.n_samples / self.rate_hz


@dataclass
class Segment:
    data: np.ndarray
    start_s: float
    len_s: float
    start_index: int = 0

    @property
    def end_s(self):
        return self.start_s + self.len_s


@dataclass(frozen=True)
class PeriodTag:
    kind: str
    fraction: float | None = None
    seizure_index: int | None = None

    @classmethod
    def crossing(cls, end_s, onset_s, len_s, seizure_index=None):
        f = min(1.0, max(0.0, (end_s - onset_s) / len_s))
        return cls(TAG_CROSSING, f, seizure_index)


@dataclass(frozen=True)
class OverlapPolicy:
    """Strides per period: interictal non-overlapping or 80% overlap, ictal
    always 80% overlap, crossing point-wise or 80% overlap."""
    interictal_overlap: bool = False
    crossing_pointwise: bool = True
    postictal_s: float = POSTICTAL_S

    @classmethod
    def chb(cls):
        return cls(interictal_overlap=False, crossing_pointwise=True, postictal_s=1800.0)

    @classmethod
    def swec(cls):
        return cls(interictal_overlap=True, crossing_pointwise=False, postictal_s=180.0)


def validate_annotations(annotations, duration_s):
    previous = None
    for span in annotations:
        if span.offset_s > duration_s + 1e-9:
            raise DataError(f"annotation {span} extends past recording end {duration_s:.3f}s")
        if previous is not None and span.onset_s < previous.offset_s:
            raise DataError(f"non-monotone annotations: {previous} then {span}")
        previous = span


def payload_path(header_path):
    root, _ = os.path.splitext(header_path)
    return root + PAYLOAD_SUFFIX


def save_recording(rec, path):
    header = {
        "channels": rec.channels,
        "rate_hz": rec.rate_hz,
        "n_samples": rec.n_samples,
        "dtype": HEADER_DTYPE,
        "layout": HEADER_LAYOUT,
        "annotations": [{"onset_s": s.onset_s, "offset_s": s.offset_s} for s in rec.annotations],
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        json.dump(header, f, indent=2)
    frames = np.ascontiguousarray(rec.samples.T).astype('<f4')
    with open(payload_path(path), 'wb') as f:
        f.write(frames.tobytes())
    return path


def load_recording(path):
    try:
        with open(path, 'r') as f:
            header = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"malformed header {path}: {e}")

    for key in ("channels", "rate_hz", "n_samples", "dtype", "layout"):
        if key not in header:
            raise DataError(f"malformed header {path}: missing '{key}'")
    if header["dtype"] != HEADER_DTYPE or header["layout"] != HEADER_LAYOUT:
        raise DataError(f"unsupported payload format {header['dtype']}/{header['layout']}")

    try:
        channels = int(header["channels"])
        n = int(header["n_samples"])
        rate_hz = float(header["rate_hz"])
        spans = [SeizureSpan(float(a["onset_s"]), float(a["offset_s"])) for a in header.get("annotations", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed header {path}: {type(e).__name__} {e}")
    if channels < 1 or n < 0:
        raise DataError(f"malformed header {path}: channels={channels}, n_samples={n}")

    try:
        with open(payload_path(path), 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise DataError(f"missing payload for {path}: {e}")
    if len(raw) != n * channels * 4:
        raise DataError(
            f"payload length mismatch: header says {n * channels * 4} bytes, file has {len(raw)}")

    frames = np.frombuffer(raw, dtype='<f4').reshape(n, channels)
    return Recording(channels, rate_hz, frames.T.astype(np.float64), spans)


def segment_samples(len_s, rate_hz):
    exact = len_s * rate_hz
    n = int(round(exact))
    if abs(exact - n) > 1e-6:
        raise DataError(f"segment length {len_s}s is not a whole number of samples at {rate_hz} Hz")
    if n < 2:
        raise DataError("segments need at least 2 samples")
    return n


def overlap_stride(n):
    return max(1, int(round(0.2 * n)))


def _segment(rec, start, n):
    return Segment(rec.samples[:, start:start + n], start / rec.rate_hz, n / rec.rate_hz, start)


def extract_segments(rec, len_s, policy=None):
    """Cut a recording into tagged segments.

    Returns a list of (Segment, PeriodTag) in ascending start order per
    period kind: interictal, then per seizure crossing, ictal and excluded.
    """
    policy = policy or OverlapPolicy()
    n = segment_samples(len_s, rec.rate_hz)
    total = rec.n_samples
    if n > total:
        raise DataError(f"segment length {len_s}s exceeds recording duration {rec.duration_s:.3f}s")

    rate = rec.rate_hz
    inter_stride = overlap_stride(n) if policy.interictal_overlap else n
    cross_stride = 1 if policy.crossing_pointwise else overlap_stride(n)
    ictal_stride = overlap_stride(n)

    out = []
    # interictal regions [a, b): segment ends must stay strictly before the next onset
    region_start = 0
    for span in rec.annotations + [None]:
        if span is None:
            last_end = total
        else:
            last_end = min(total, math.ceil(span.onset_s * rate) - 1)
        for s in range(region_start, last_end - n + 1, inter_stride):
            out.append((_segment(rec, s, n), PeriodTag(TAG_INTERICTAL)))
        if span is not None:
            region_start = math.ceil((span.offset_s + policy.postictal_s) * rate)

    for k, span in enumerate(rec.annotations):
        onset = span.onset_s * rate
        offset = span.offset_s * rate

        # crossing: segment end in [onset, onset + n)
        first_end = max(math.ceil(onset), n)
        for e in range(first_end, min(total, math.ceil(onset + n) - 1) + 1, cross_stride):
            seg = _segment(rec, e - n, n)
            out.append((seg, PeriodTag.crossing(e / rate, span.onset_s, len_s, k)))

        # ictal: start >= onset, end <= offset
        for s in range(math.ceil(onset), math.floor(offset) - n + 1, ictal_stride):
            out.append((_segment(rec, s, n), PeriodTag(TAG_ICTAL, 1.0, k)))

        # postictal exclusion window, clipped before the next crossing window
        excl_end = math.floor((span.offset_s + policy.postictal_s) * rate)
        if k + 1 < len(rec.annotations):
            excl_end = min(excl_end, math.ceil(rec.annotations[k + 1].onset_s * rate) - 1)
        excl_end = min(excl_end, total)
        for s in range(math.ceil(offset), excl_end - n + 1, n):
            out.append((_segment(rec, s, n), PeriodTag(TAG_EXCLUDED, None, k)))

    return out


def window_ending_at(rec, t_s, len_s):
    """Trailing window of len_s seconds ending at time t (the streaming view)."""
    n = segment_samples(len_s, rec.rate_hz)
    end = int(math.floor(t_s * rec.rate_hz + 1e-9))
    if end < n or end > rec.n_samples:
        raise DataError(f"window ending at {t_s:.3f}s does not fit the recording")
    return _segment(rec, end - n, n)
