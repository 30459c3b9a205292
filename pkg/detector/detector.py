"""Real-time decision rule over a stream of ictal probabilities (PIPs).

Every 1/r seconds a new PIP arrives. It is rectified against least-squares
lines fitted to the previous 5 s, 3 s and 1 s of PIPs, the increases of the
rectified values over the last horizon are accumulated, and an alarm fires
when the accumulation reaches the threshold. An alarm resets both history
buffers to zeros.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from shared.config import DECISION_THR, DETECT_RATE, HORIZON_S, LAMBDAS, LOCKOUT_S
from shared.errors import ConfigError

LOOKBACKS_S = (5, 3, 1)


@dataclass(frozen=True)
class DetectorConfig:
    rate: int = DETECT_RATE
    thr: float = DECISION_THR
    lambdas: tuple = LAMBDAS
    horizon_s: float = HORIZON_S
    lockout_s: float = LOCKOUT_S

    def __post_init__(self):
        if self.rate <= 0:
            raise ConfigError(f"detection rate must be positive, got {self.rate}")
        if len(self.lambdas) != 4:
            raise ConfigError(f"expected 4 lambdas, got {len(self.lambdas)}")
        if abs(sum(self.lambdas) - 1.0) > 1e-9:
            raise ConfigError(f"lambdas must sum to 1, got {sum(self.lambdas)}")
        k = self.rate * self.horizon_s
        if k < 1 or abs(k - round(k)) > 1e-9:
            raise ConfigError(f"rate * horizon_s must be a positive integer, got {k}")
        if max(LOOKBACKS_S) * self.rate > round(k):
            raise ConfigError(f"horizon_s must cover the longest lookback ({max(LOOKBACKS_S)} s)")
        if self.lockout_s < 0:
            raise ConfigError("lockout_s must be non-negative")

    @property
    def buffer_len(self):
        return int(round(self.rate * self.horizon_s))

    def with_thr(self, thr):
        return replace(self, thr=thr)


@dataclass
class DetectorState:
    pip_buffer: deque
    rpip_buffer: deque
    step_index: int = 0
    alarms: list = field(default_factory=list)

    @classmethod
    def zeros(cls, cfg):
        k = cfg.buffer_len
        return cls(deque([0.0] * k, maxlen=k), deque([0.0] * k, maxlen=k))

    def refresh(self):
        k = self.pip_buffer.maxlen
        self.pip_buffer.extend([0.0] * k)
        self.rpip_buffer.extend([0.0] * k)


@dataclass(frozen=True)
class StepResult:
    t_s: float
    pip: float
    rpip: float
    ap: float
    alarm: bool


def extrapolate_now(history):
    """OLS line through the given values, taken one step apart and ending one
    step before now, evaluated at now. Fewer than 2 points fall back to the
    mean."""
    y = np.asarray(history, dtype=np.float64)
    m = y.size
    if m == 0:
        return 0.0
    if m < 2:
        return float(y.mean())
    x = np.arange(-m, 0, dtype=np.float64)
    x_mean = x.mean()
    y_mean = y.mean()
    dx = x - x_mean
    slope = float(np.dot(dx, y - y_mean) / np.dot(dx, dx))
    return float(y_mean - slope * x_mean)


def rectify(pip_t, state, cfg):
    history = list(state.pip_buffer)
    fits = [extrapolate_now(history[len(history) - cfg.rate * s:]) for s in LOOKBACKS_S]
    rpip = float(np.dot(cfg.lambdas, fits + [pip_t]))
    state.pip_buffer.append(float(pip_t))
    return min(1.0, max(0.0, rpip))


def accumulate(rpip_t, state, cfg):
    state.rpip_buffer.append(float(rpip_t))
    values = np.fromiter(state.rpip_buffer, dtype=np.float64)
    rising = values[1:] > values[:-1]
    return float(values[1:][rising].sum() / cfg.rate)


def _locked_out(t_s, state, cfg):
    if cfg.lockout_s <= 0 or not state.alarms:
        return False
    return t_s - state.alarms[-1] < cfg.lockout_s


def decide(pip_t, t_s, state, cfg):
    """Rectify, accumulate and apply the threshold for one tick."""
    state.step_index += 1
    rpip = rectify(pip_t, state, cfg)
    ap = accumulate(rpip, state, cfg)
    alarm = ap >= cfg.thr and not _locked_out(t_s, state, cfg)
    if alarm:
        state.alarms.append(t_s)
        state.refresh()
    return StepResult(t_s, float(pip_t), rpip, ap, alarm)


class Detector:
    """Holds one stream's state; feed it one PIP per 1/r seconds."""

    def __init__(self, cfg=None):
        self.cfg = cfg or DetectorConfig()
        self.state = DetectorState.zeros(self.cfg)

    def reset(self):
        self.state = DetectorState.zeros(self.cfg)

    def update(self, pip_t, t_s=None):
        if t_s is None:
            t_s = (self.state.step_index + 1) / self.cfg.rate
        return decide(pip_t, t_s, self.state, self.cfg)

    def run(self, pips, times=None):
        if times is None:
            return [self.update(p) for p in pips]
        return [self.update(p, t) for p, t in zip(pips, times)]


def step(sample_segment, model, state, cfg, t_s=None):
    """One tick on a raw window ending at t. `model` is anything with
    `predict_segment(segment) -> pip`. Returns the alarm time, or None."""
    pip = model.predict_segment(sample_segment)
    result = decide(pip, sample_segment.end_s if t_s is None else t_s, state, cfg)
    return result.t_s if result.alarm else None
