"""Deterministic synthetic multichannel EEG with annotated seizures.

Interictal activity is AR(2) coloured noise per channel. During a seizure
each channel gets a sinusoid in the ictal band whose amplitude ramps
linearly up from zero at onset.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from recordings.signal_io import Recording, SeizureSpan
from shared.errors import DataError


@dataclass
class SynthConfig:
    seed: int = 0
    channels: int = 4
    rate_hz: float = 256.0
    duration_s: float = 600.0
    ar_coeffs: tuple = (1.2, -0.3)
    noise_amp: float = 1.0
    band_hz: tuple = (3.0, 8.0)
    ramp_s: float = 5.0
    ictal_gain: float = 4.0
    seizures: list = field(default_factory=list)

    def validate(self):
        if self.channels <= 0 or self.rate_hz <= 0 or self.duration_s <= 0:
            raise DataError("channels, rate_hz and duration_s must be positive")
        low, high = self.band_hz
        if not 0 < low < high < self.rate_hz / 2:
            raise DataError(f"ictal band {self.band_hz} must lie below Nyquist ({self.rate_hz / 2} Hz)")
        previous_end = None
        for onset, duration in self.seizures:
            if onset < 0 or duration <= 0:
                raise DataError(f"invalid seizure ({onset}, {duration})")
            if self.ramp_s > duration:
                raise DataError(f"ramp {self.ramp_s}s longer than seizure of {duration}s")
            if previous_end is not None and onset < previous_end:
                raise DataError(f"seizure at {onset}s overlaps the previous one")
            if onset + duration > self.duration_s:
                raise DataError(f"seizure at {onset}s runs past the end of the recording")
            previous_end = onset + duration


def evenly_spaced_schedule(n_seizures, interictal_s, seizure_s, postictal_s, seed, jitter_s=60.0):
    """Lay out n seizures so that each is preceded by an equal share of
    interictal time (plus seeded jitter) and followed by a postictal gap.
    Returns (schedule, total duration in seconds)."""
    if n_seizures == 0:
        return [], float(interictal_s)
    rng = np.random.default_rng([seed, 0xC0FFEE])
    gap = interictal_s / (n_seizures + 1)
    jitter = min(jitter_s, 0.25 * gap)
    schedule = []
    t = 0.0
    for _ in range(n_seizures):
        lead = gap + float(rng.uniform(-jitter, jitter))
        onset = round(t + lead, 3)
        schedule.append((onset, float(seizure_s)))
        t = onset + seizure_s + postictal_s
    return schedule, round(t + gap, 3)


def _ar_noise(rng, n, coeffs, amp):
    white = rng.standard_normal(n)
    a1, a2 = coeffs
    colored = signal.lfilter([1.0], [1.0, -a1, -a2], white)
    std = colored.std()
    return amp * colored / std if std > 0 else colored


def generate(cfg):
    cfg.validate()
    n = int(round(cfg.duration_s * cfg.rate_hz))
    t = np.arange(n) / cfg.rate_hz
    samples = np.empty((cfg.channels, n), dtype=np.float64)

    for ch in range(cfg.channels):
        rng = np.random.default_rng([cfg.seed, ch])
        x = _ar_noise(rng, n, cfg.ar_coeffs, cfg.noise_amp)
        for onset, duration in cfg.seizures:
            freq = rng.uniform(*cfg.band_hz)
            phase = rng.uniform(0, 2 * np.pi)
            inside = (t >= onset) & (t < onset + duration)
            ramp = np.clip((t[inside] - onset) / cfg.ramp_s, 0.0, 1.0)
            x[inside] += cfg.ictal_gain * cfg.noise_amp * ramp * np.sin(2 * np.pi * freq * (t[inside] - onset) + phase)
        samples[ch] = x

    spans = [SeizureSpan(float(onset), float(onset + duration)) for onset, duration in cfg.seizures]
    return Recording(cfg.channels, float(cfg.rate_hz), samples, spans)
