"""Probability-pair labels and the labeled-dataset manifest.

Pure periods keep one-hot labels. A crossing segment whose ictal share is f
gets P_ictal = 0.05 p for the smallest p in 0..19 with f <= 0.05 p, capped at
p = 19, so the crossing labels form 20 pairs on the 0.05 grid.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from recordings.signal_io import (
    TAG_CROSSING, TAG_EXCLUDED, TAG_ICTAL, TAG_INTERICTAL,
    PeriodTag, Segment, extract_segments, load_recording, segment_samples,
)
from features.spectral import segment_features
from shared.console import log
from shared.errors import DataError

GRID_STEP = 0.05
MAX_GRID_INDEX = 19


@dataclass(frozen=True)
class SoftLabel:
    p_interictal: float
    p_ictal: float

    def as_array(self):
        return np.array([self.p_interictal, self.p_ictal], dtype=np.float64)


def grid_index(f):
    # rounding keeps exact grid points (0.35 / 0.05 = 7.000000000000001) on their step
    p = math.ceil(round(f / GRID_STEP, 9))
    return min(max(p, 0), MAX_GRID_INDEX)


def label_segment(tag):
    if tag.kind == TAG_INTERICTAL:
        return SoftLabel(1.0, 0.0)
    if tag.kind == TAG_ICTAL:
        return SoftLabel(0.0, 1.0)
    if tag.kind == TAG_CROSSING:
        p = grid_index(tag.fraction)
        p_ictal = round(GRID_STEP * p, 2)
        return SoftLabel(1.0 - p_ictal, p_ictal)
    if tag.kind == TAG_EXCLUDED:
        raise DataError("excluded (postictal) segments carry no label")
    raise DataError(f"unknown period tag '{tag.kind}'")


def build_manifest(recording_id, rec, len_s, policy=None):
    records = []
    for seg, tag in extract_segments(rec, len_s, policy):
        if tag.kind == TAG_EXCLUDED:
            continue
        label = label_segment(tag)
        records.append({
            "recording_id": recording_id,
            "start_s": seg.start_s,
            "len_s": len_s,
            "tag": tag.kind,
            "fraction": tag.fraction,
            "seizure_index": tag.seizure_index,
            "p_ictal": label.p_ictal,
        })
    return records


def write_manifest(records, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
    return path


def read_manifest(path):
    records = []
    try:
        with open(path, 'r') as f:
            for line_no, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                for key in ("recording_id", "start_s", "tag", "p_ictal"):
                    if key not in record:
                        raise DataError(f"{path}:{line_no} missing '{key}'")
                records.append(record)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}")
    return records


@dataclass
class FeatureSet:
    """Stacked, normalized features: per scale (N, channels, bins, time)."""
    features: dict
    labels: np.ndarray
    tags: list
    seizure_index: list
    fractions: list
    start_s: list = None

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.intp)
        return FeatureSet(
            {s: t[indices] for s, t in self.features.items()},
            self.labels[indices],
            [self.tags[i] for i in indices],
            [self.seizure_index[i] for i in indices],
            [self.fractions[i] for i in indices],
            None if self.start_s is None else [self.start_s[i] for i in indices],
        )

    def tag_set(self):
        return set(self.tags)


def featurize_segments(pairs, spectral_cfg, batch_size=512):
    """(Segment, PeriodTag) pairs -> FeatureSet, excluded segments dropped."""
    pairs = [(seg, tag) for seg, tag in pairs if tag.kind != TAG_EXCLUDED]
    if not pairs:
        raise DataError("no labeled segments to featurize")
    chunks = []
    for i in range(0, len(pairs), batch_size):
        batch = np.stack([seg.data for seg, _ in pairs[i:i + batch_size]])
        chunks.append(segment_features(batch, spectral_cfg).tensors)
    features = {s: np.concatenate([c[s] for c in chunks]) for s in chunks[0]}
    labels = np.stack([label_segment(tag).as_array() for _, tag in pairs])
    return FeatureSet(
        features,
        labels,
        [tag.kind for _, tag in pairs],
        [tag.seizure_index for _, tag in pairs],
        [tag.fraction for _, tag in pairs],
        [seg.start_s for seg, _ in pairs],
    )


def load_feature_set(records, recording_paths, spectral_cfg):
    """Resolve manifest records against recording files and featurize them."""
    recordings = {}
    pairs = []
    for record in records:
        rid = record["recording_id"]
        if rid not in recordings:
            if rid not in recording_paths:
                raise DataError(f"manifest references unknown recording '{rid}'")
            recordings[rid] = load_recording(recording_paths[rid])
        rec = recordings[rid]
        n = segment_samples(record.get("len_s", 5.0), rec.rate_hz)
        start = int(round(record["start_s"] * rec.rate_hz))
        if start < 0 or start + n > rec.n_samples:
            raise DataError(f"segment at {record['start_s']}s falls outside recording '{rid}'")
        seg = Segment(rec.samples[:, start:start + n], record["start_s"], n / rec.rate_hz, start)
        tag = PeriodTag(record["tag"], record.get("fraction"), record.get("seizure_index"))
        pairs.append((seg, tag))
    log('DATA', f"featurizing {len(pairs)} segments from {len(recordings)} recording(s)")
    return featurize_segments(pairs, spectral_cfg)
