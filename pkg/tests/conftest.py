import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from features.labeling import featurize_segments
from features.spectral import SpectralConfig
from model.network import ModelConfig
from recordings.signal_io import TAG_CROSSING, TAG_ICTAL, TAG_INTERICTAL, OverlapPolicy, extract_segments
from recordings.synth import SynthConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def small_recording():
    """2 channels at 64 Hz, 400 s, two 30 s seizures."""
    cfg = SynthConfig(seed=3, channels=2, rate_hz=64.0, duration_s=400.0,
                      seizures=[(100.0, 30.0), (260.0, 30.0)])
    return generate(cfg)


@pytest.fixture
def tiny_spectral():
    return SpectralConfig(scales=(1, 2), nfft=64)


@pytest.fixture
def tiny_model():
    return ModelConfig.tiny(channels=2, scales=(1, 2), kept_bins=32)


@pytest.fixture(scope='session')
def tiny_dataset(small_recording):
    """Every interictal and ictal segment plus every 16th crossing segment."""
    pairs = extract_segments(small_recording, 5.0, OverlapPolicy(postictal_s=60.0))
    kept = [(seg, tag) for i, (seg, tag) in enumerate(pairs)
            if tag.kind in (TAG_INTERICTAL, TAG_ICTAL) or (tag.kind == TAG_CROSSING and i % 16 == 0)]
    return featurize_segments(kept, SpectralConfig(scales=(1, 2), nfft=64))
