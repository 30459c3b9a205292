import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dotenv import dotenv_values, load_dotenv

load_dotenv()

_TRUTHY = ('true', '1', 'yes', 'on')

_CONVERTERS = {
    bool: lambda raw: raw.lower() in _TRUTHY,
    int: int,
    float: float,
    str: str,
}


class Config:
    """Settings lookup: process environment, then the project .env, then the caller's default."""

    def __init__(self, env_file='.env'):
        self._file_values = {}
        self._load_env_file(env_file)

    def _load_env_file(self, env_file):
        # .env lives in the project root, next to seizure_cli.py
        root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        path = os.path.join(root, env_file)
        if os.path.exists(path):
            self._file_values = {k: v for k, v in dotenv_values(path).items() if v is not None}

    def raw(self, key):
        value = os.getenv(key)
        return value if value is not None else self._file_values.get(key)

    def get(self, key, default=None, value_type=str):
        raw = self.raw(key)
        if raw is None:
            return default
        try:
            return _CONVERTERS.get(value_type, str)(raw)
        except (ValueError, AttributeError):
            return default

    def get_int(self, key, default=0):
        return self.get(key, default, int)

    def get_float(self, key, default=0.0):
        return self.get(key, default, float)

    def get_bool(self, key, default=False):
        return self.get(key, default, bool)

    def get_str(self, key, default=''):
        return self.get(key, default, str)

    def get_floats(self, key, default=()):
        raw = self.raw(key)
        if raw is None:
            return tuple(default)
        try:
            return tuple(float(part) for part in raw.split(',') if part.strip())
        except ValueError:
            return tuple(default)

    def get_ints(self, key, default=()):
        return tuple(int(v) for v in self.get_floats(key, default))


def load_toml(path):
    """Read a TOML run file into a dict of top-level keys and sections."""
    with open(path, 'rb') as f:
        return tomllib.load(f)


def merge_settings(defaults, toml_section=None, flags=None):
    """flags > TOML section > defaults. None-valued flags are ignored."""
    merged = dict(defaults)
    for source in (toml_section or {}, flags or {}):
        for key, value in source.items():
            if value is not None and key in merged:
                merged[key] = value
    return merged


config = Config()

# segmentation
SEGMENT_S = config.get_float('SEGMENT_S', 5.0)
POSTICTAL_S = config.get_float('POSTICTAL_S', 1800.0)

# spectral front end
NFFT = config.get_int('NFFT', 64)
SCALES = config.get_ints('SCALES', (1, 2, 3, 4, 5))
WINDOW_FN = config.get_str('WINDOW_FN', 'hann')
KEPT_BINS = NFFT // 2

# decision rule
DETECT_RATE = config.get_int('DETECT_RATE', 10)
DECISION_THR = config.get_float('DECISION_THR', 0.5)
LAMBDAS = config.get_floats('LAMBDAS', (0.2, 0.3, 0.3, 0.2))
HORIZON_S = config.get_float('HORIZON_S', 5.0)
LOCKOUT_S = config.get_float('LOCKOUT_S', 0.0)

# training
LEARNING_RATE = config.get_float('LEARNING_RATE', 1e-4)
BETA1 = config.get_float('BETA1', 0.9)
BETA2 = config.get_float('BETA2', 0.999)
NADAM_EPS = config.get_float('NADAM_EPS', 1e-8)
EPOCHS = config.get_int('EPOCHS', 20)
BATCH_SIZE = config.get_int('BATCH_SIZE', 32)
FC_WIDTH = config.get_int('FC_WIDTH', 512)
WIDTH_MULTIPLIER = config.get_float('WIDTH_MULTIPLIER', 1.0)
DEFAULT_SEED = config.get_int('DEFAULT_SEED', 0)

# fold fan-out
FOLD_WORKERS = config.get_int('FOLD_WORKERS', 1)

# output locations
CHECKPOINT_DIR = config.get_str('CHECKPOINT_DIR', 'checkpoints')
OUTPUT_DIR = config.get_str('OUTPUT_DIR', 'runs')

LOG_LEVEL = config.get_str('LOG_LEVEL', 'INFO')
ENABLE_DEBUG_LOGGING = config.get_bool('ENABLE_DEBUG_LOGGING', False)

# desk-scale synthetic patients
SYNTH_RATE_HZ = config.get_float('SYNTH_RATE_HZ', 64.0)
SYNTH_CHANNELS = config.get_int('SYNTH_CHANNELS', 4)
SYNTH_SEIZURE_S = config.get_float('SYNTH_SEIZURE_S', 40.0)
SYNTH_POSTICTAL_S = config.get_float('SYNTH_POSTICTAL_S', 180.0)
SYNTH_RAMP_S = config.get_float('SYNTH_RAMP_S', 2.0)
MODEL_PRESET = config.get_str('MODEL_PRESET', 'desk')
