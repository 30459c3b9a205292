"""Multiscale STFT features.

At scale n a segment of L samples is cut into 2**n - 1 half-overlapping
windows of length L / 2**(n-1). Each tapered window is folded onto nfft
samples (sum of consecutive nfft blocks), which gives the exact length-WL
DFT decimated to nfft equispaced frequencies, then transformed with a
radix-2 FFT. The first nfft/2 magnitudes are kept.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from shared.config import NFFT, SCALES, WINDOW_FN
from shared.errors import ConfigError, DataError


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x):
    """Iterative radix-2 decimation-in-time FFT along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ConfigError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    x = x[..., _bit_reverse_indices(n)]

    m = 2
    while m <= n:
        half = m // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = x.reshape(lead + (n // m, m))
        u = blocks[..., :half].copy()
        t = blocks[..., half:] * twiddle
        blocks[..., :half] = u + t
        blocks[..., half:] = u - t
        m <<= 1
    return x


def fft_magnitude(signal):
    signal = np.asarray(signal, dtype=np.float64)
    n = signal.shape[-1]
    return np.abs(fft(signal))[..., :n // 2]


@dataclass(frozen=True)
class SpectralConfig:
    scales: tuple = SCALES
    nfft: int = NFFT
    window_fn: str = WINDOW_FN
    overlap_fraction: float = 0.5

    def __post_init__(self):
        if not is_power_of_two(self.nfft) or self.nfft < 2:
            raise ConfigError(f"nfft must be a power of two, got {self.nfft}")
        if not self.scales or any(s < 1 for s in self.scales):
            raise ConfigError(f"scales must be positive integers, got {self.scales}")
        if list(self.scales) != sorted(set(self.scales)):
            raise ConfigError(f"scales must be sorted ascending without repeats, got {self.scales}")
        if self.overlap_fraction != 0.5:
            raise ConfigError("overlap_fraction is fixed at 0.5")

    @property
    def kept_bins(self):
        return self.nfft // 2


@dataclass
class MultiscaleSpectrogram:
    """Per scale a (channels, kept_bins, 2**n - 1) tensor, or a batch of them
    with a leading sample axis."""
    tensors: dict = field(default_factory=dict)
    normalized: bool = False

    @property
    def scales(self):
        return tuple(sorted(self.tensors))


def n_windows(scale):
    return 2 ** scale - 1


def padded_length(n, scales):
    block = 2 ** max(scales)
    return -(-n // block) * block


def window_length(padded, scale):
    return padded // 2 ** (scale - 1)


def _taper(name, length):
    return get_window(name, length, fftbins=True)


def _fold(frames, nfft):
    """Sum consecutive nfft-sample blocks (time aliasing); short frames are
    zero-padded up to nfft."""
    wl = frames.shape[-1]
    target = max(nfft, -(-wl // nfft) * nfft)
    if target != wl:
        pad = [(0, 0)] * (frames.ndim - 1) + [(0, target - wl)]
        frames = np.pad(frames, pad)
    return frames.reshape(frames.shape[:-1] + (target // nfft, nfft)).sum(axis=-2)


def stft_scale(data, scale, cfg):
    """Magnitudes for one scale. data: (..., samples) already padded."""
    padded = data.shape[-1]
    wl = window_length(padded, scale)
    if wl < 2:
        raise DataError(f"window length {wl} at scale {scale} is below 2 samples")
    hop = wl // 2
    count = n_windows(scale)
    starts = hop * np.arange(count)
    idx = starts[:, None] + np.arange(wl)[None, :]
    frames = data[..., idx] * _taper(cfg.window_fn, wl)
    spectra = fft_magnitude(_fold(frames, cfg.nfft))[..., :cfg.kept_bins]
    # (..., time, freq) -> (..., freq, time)
    return np.swapaxes(spectra, -1, -2)


def multiscale_stft(data, cfg):
    """data: Segment, (channels, samples) array, or (batch, channels, samples)."""
    data = np.asarray(getattr(data, 'data', data), dtype=np.float64)
    padded = padded_length(data.shape[-1], cfg.scales)
    if padded != data.shape[-1]:
        pad = [(0, 0)] * (data.ndim - 1) + [(0, padded - data.shape[-1])]
        data = np.pad(data, pad)
    return MultiscaleSpectrogram({s: stft_scale(data, s, cfg) for s in cfg.scales}, normalized=False)


def freq_norm(spec):
    """Min-max normalize each frequency vector (axis -2) to [0, 1];
    constant vectors map to zeros."""
    out = {}
    for scale, tensor in spec.tensors.items():
        lo = tensor.min(axis=-2, keepdims=True)
        hi = tensor.max(axis=-2, keepdims=True)
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        out[scale] = np.where(span > 0, (tensor - lo) / safe, 0.0)
    return MultiscaleSpectrogram(out, normalized=True)


def segment_features(data, cfg):
    return freq_norm(multiscale_stft(data, cfg))
