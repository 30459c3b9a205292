"""Multiscale 3D-CNN probability predictor.

Per scale: 3 x [conv3d -> ReLU -> max-pool] -> flatten -> FC -> ReLU.
The per-scale vectors are stacked into an (n_scales x fc_width) image,
then 3 x [conv2d 5x5 -> ReLU -> 2x2 max-pool] -> flatten -> FC head with
ReLU -> 2 sigmoid outputs. The 3D image is H = EEG channel, W = frequency,
depth = time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from model import layers
from shared.config import FC_WIDTH, KEPT_BINS, SCALES, WIDTH_MULTIPLIER
from shared.errors import ConfigError, ShapeMismatchError

BLOCKS = 3
LOSS_EPS = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    channels: int
    kept_bins: int = KEPT_BINS
    scales: tuple = SCALES
    conv3d_filters: tuple = (16, 32, 64)
    conv2d_filters: tuple = (16, 32, 64)
    fc_width: int = FC_WIDTH
    head_widths: tuple = (1024, 256, 64)
    channel_width_multiplier: float = WIDTH_MULTIPLIER

    def __post_init__(self):
        if self.channels < 1 or self.kept_bins < 1 or self.fc_width < 1:
            raise ConfigError("channels, kept_bins and fc_width must be positive")
        if len(self.conv3d_filters) != BLOCKS or len(self.conv2d_filters) != BLOCKS:
            raise ConfigError(f"conv stacks are fixed at {BLOCKS} blocks")
        if self.channel_width_multiplier <= 0:
            raise ConfigError("channel_width_multiplier must be positive")

    @classmethod
    def tiny(cls, channels=2, scales=(1, 2), kept_bins=32):
        return cls(channels=channels, kept_bins=kept_bins, scales=tuple(scales),
                   conv3d_filters=(2, 2, 2), conv2d_filters=(2, 2, 2),
                   fc_width=8, head_widths=(8, 4), channel_width_multiplier=1.0)

    @classmethod
    def desk(cls, channels, scales=(1, 2, 3), kept_bins=32):
        return cls(channels=channels, kept_bins=kept_bins, scales=tuple(scales),
                   conv3d_filters=(16, 32, 64), conv2d_filters=(16, 32, 64),
                   fc_width=64, head_widths=(64, 32, 16), channel_width_multiplier=0.25)

    def to_dict(self):
        return {
            "channels": self.channels,
            "kept_bins": self.kept_bins,
            "scales": list(self.scales),
            "conv3d_filters": list(self.conv3d_filters),
            "conv2d_filters": list(self.conv2d_filters),
            "fc_width": self.fc_width,
            "head_widths": list(self.head_widths),
            "channel_width_multiplier": self.channel_width_multiplier,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            channels=int(d["channels"]),
            kept_bins=int(d["kept_bins"]),
            scales=tuple(d["scales"]),
            conv3d_filters=tuple(d["conv3d_filters"]),
            conv2d_filters=tuple(d["conv2d_filters"]),
            fc_width=int(d["fc_width"]),
            head_widths=tuple(d["head_widths"]),
            channel_width_multiplier=float(d["channel_width_multiplier"]),
        )

    def filters3d(self):
        return tuple(max(1, int(round(f * self.channel_width_multiplier))) for f in self.conv3d_filters)

    def filters2d(self):
        return tuple(max(1, int(round(f * self.channel_width_multiplier))) for f in self.conv2d_filters)

    @staticmethod
    def kernel3d(scale):
        return (3, 3, 1) if scale <= 2 else (3, 3, 3)

    @staticmethod
    def pool3d(scale):
        return (2, 2, 1) if scale <= 2 else (2, 2, 2)


KERNEL2D = (5, 5)
POOL2D = (2, 2)


@dataclass
class ProbabilityPair:
    p_hat_interictal: float
    p_hat_ictal: float


@dataclass
class ModelParams:
    tensors: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for name, t in self.tensors.items():
            self.m.setdefault(name, np.zeros_like(t))
            self.v.setdefault(name, np.zeros_like(t))

    def copy(self):
        return ModelParams(
            {k: t.copy() for k, t in self.tensors.items()},
            {k: t.copy() for k, t in self.m.items()},
            {k: t.copy() for k, t in self.v.items()},
            self.step,
        )

    def n_parameters(self):
        return int(sum(t.size for t in self.tensors.values()))

    def is_finite(self):
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())


def _pooled(shape, pool):
    return tuple(layers.pool_extent(d, p)[1] for d, p in zip(shape, pool))


def infer_shapes(cfg):
    """Per-stage shapes without the batch axis, keyed by stage name."""
    shapes = {}
    for scale in cfg.scales:
        spatial = (cfg.channels, cfg.kept_bins, 2 ** scale - 1)
        shapes[f"s{scale}.input"] = (1,) + spatial
        for b, f in enumerate(cfg.filters3d()):
            shapes[f"s{scale}.conv{b}"] = (f,) + spatial
            spatial = _pooled(spatial, cfg.pool3d(scale))
            shapes[f"s{scale}.pool{b}"] = (f,) + spatial
        shapes[f"s{scale}.fc"] = (cfg.fc_width,)
    spatial = (len(cfg.scales), cfg.fc_width)
    shapes["fuse.input"] = (1,) + spatial
    for b, f in enumerate(cfg.filters2d()):
        shapes[f"fuse.conv{b}"] = (f,) + spatial
        spatial = _pooled(spatial, POOL2D)
        shapes[f"fuse.pool{b}"] = (f,) + spatial
    for i, width in enumerate(cfg.head_widths):
        shapes[f"head.fc{i}"] = (width,)
    shapes["out"] = (2,)
    return shapes


def param_shapes(cfg):
    """Parameter names and shapes in canonical (checkpoint) order."""
    shapes = infer_shapes(cfg)
    out = []
    for scale in cfg.scales:
        c_in = 1
        for b, f in enumerate(cfg.filters3d()):
            out.append((f"s{scale}.conv{b}.w", (f, c_in) + cfg.kernel3d(scale)))
            out.append((f"s{scale}.conv{b}.b", (f,)))
            c_in = f
        flat = int(np.prod(shapes[f"s{scale}.pool{BLOCKS - 1}"]))
        out.append((f"s{scale}.fc.w", (flat, cfg.fc_width)))
        out.append((f"s{scale}.fc.b", (cfg.fc_width,)))
    c_in = 1
    for b, f in enumerate(cfg.filters2d()):
        out.append((f"fuse.conv{b}.w", (f, c_in) + KERNEL2D))
        out.append((f"fuse.conv{b}.b", (f,)))
        c_in = f
    width_in = int(np.prod(shapes[f"fuse.pool{BLOCKS - 1}"]))
    for i, width in enumerate(cfg.head_widths):
        out.append((f"head.fc{i}.w", (width_in, width)))
        out.append((f"head.fc{i}.b", (width,)))
        width_in = width
    out.append(("out.w", (width_in, 2)))
    out.append(("out.b", (2,)))
    return out


def count_parameters(cfg):
    """Closed-form parameter count."""
    shapes = infer_shapes(cfg)
    total = 0
    for scale in cfg.scales:
        k = int(np.prod(cfg.kernel3d(scale)))
        prev = 1
        for f in cfg.filters3d():
            total += prev * f * k + f
            prev = f
        flat = int(np.prod(shapes[f"s{scale}.pool{BLOCKS - 1}"]))
        total += flat * cfg.fc_width + cfg.fc_width
    prev = 1
    for f in cfg.filters2d():
        total += prev * f * KERNEL2D[0] * KERNEL2D[1] + f
        prev = f
    widths = [int(np.prod(shapes[f"fuse.pool{BLOCKS - 1}"]))] + list(cfg.head_widths) + [2]
    for a, b in zip(widths[:-1], widths[1:]):
        total += a * b + b
    return total


def model_size(cfg):
    n = count_parameters(cfg)
    return {"parameters": n, "bytes_f32": 4 * n, "bytes_f64": 8 * n}


def _fans(name, shape):
    if len(shape) == 2:
        return shape[0], shape[1]
    receptive = int(np.prod(shape[2:]))
    return shape[1] * receptive, shape[0] * receptive


def init_params(cfg, seed):
    """Glorot-uniform weights, zero biases, one seeded stream in canonical order."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg):
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(name, shape)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams(tensors)


def zero_params(cfg):
    return ModelParams({name: np.zeros(shape) for name, shape in param_shapes(cfg)})


def check_features(features, cfg):
    batch = None
    for scale in cfg.scales:
        if scale not in features:
            raise ShapeMismatchError(f"features lack scale {scale}")
        tensor = features[scale]
        expected = (cfg.channels, cfg.kept_bins, 2 ** scale - 1)
        if tensor.ndim != 4 or tensor.shape[1:] != expected:
            raise ShapeMismatchError(
                f"scale {scale}: expected (N, {expected[0]}, {expected[1]}, {expected[2]}), got {tensor.shape}")
        if batch is not None and tensor.shape[0] != batch:
            raise ShapeMismatchError("scales disagree on batch size")
        batch = tensor.shape[0]
    return batch


def forward_batch(features, params, cfg):
    """features: scale -> (N, channels, bins, time). Returns (probs (N, 2), cache)."""
    check_features(features, cfg)
    p = params.tensors
    cache = {"scales": {}}
    vectors = []
    for scale in cfg.scales:
        x = features[scale][:, None].astype(np.float64)
        blocks = []
        for b in range(BLOCKS):
            z, c_conv = layers.conv_forward(x, p[f"s{scale}.conv{b}.w"], p[f"s{scale}.conv{b}.b"])
            a, c_relu = layers.relu_forward(z)
            x, c_pool = layers.maxpool_forward(a, cfg.pool3d(scale))
            blocks.append((c_conv, c_relu, c_pool))
        z, c_fc = layers.affine_forward(x, p[f"s{scale}.fc.w"], p[f"s{scale}.fc.b"])
        v, c_relu = layers.relu_forward(z)
        vectors.append(v)
        cache["scales"][scale] = (blocks, c_fc, c_relu)

    x = np.stack(vectors, axis=1)[:, None]
    fuse = []
    for b in range(BLOCKS):
        z, c_conv = layers.conv_forward(x, p[f"fuse.conv{b}.w"], p[f"fuse.conv{b}.b"])
        a, c_relu = layers.relu_forward(z)
        x, c_pool = layers.maxpool_forward(a, POOL2D)
        fuse.append((c_conv, c_relu, c_pool))
    cache["fuse"] = fuse

    head = []
    h = x
    for i in range(len(cfg.head_widths)):
        z, c_fc = layers.affine_forward(h, p[f"head.fc{i}.w"], p[f"head.fc{i}.b"])
        h, c_relu = layers.relu_forward(z)
        head.append((c_fc, c_relu))
    cache["head"] = head

    logits, c_out = layers.affine_forward(h, p["out.w"], p["out.b"])
    cache["out"] = c_out
    return layers.sigmoid(logits), cache


def backward_batch(dlogits, cache, cfg):
    grads = {}
    dh, grads["out.w"], grads["out.b"] = layers.affine_backward(dlogits, cache["out"])
    for i in reversed(range(len(cfg.head_widths))):
        c_fc, c_relu = cache["head"][i]
        dz = layers.relu_backward(dh, c_relu)
        dh, grads[f"head.fc{i}.w"], grads[f"head.fc{i}.b"] = layers.affine_backward(dz, c_fc)

    dx = dh
    for b in reversed(range(BLOCKS)):
        c_conv, c_relu, c_pool = cache["fuse"][b]
        da = layers.maxpool_backward(dx, c_pool)
        dz = layers.relu_backward(da, c_relu)
        dx, grads[f"fuse.conv{b}.w"], grads[f"fuse.conv{b}.b"] = layers.conv_backward(dz, c_conv)

    dstack = dx[:, 0]
    for i, scale in enumerate(cfg.scales):
        blocks, c_fc, c_relu = cache["scales"][scale]
        dz = layers.relu_backward(dstack[:, i], c_relu)
        dx, grads[f"s{scale}.fc.w"], grads[f"s{scale}.fc.b"] = layers.affine_backward(dz, c_fc)
        for b in reversed(range(BLOCKS)):
            c_conv, c_relu_b, c_pool = blocks[b]
            da = layers.maxpool_backward(dx, c_pool)
            dz = layers.relu_backward(da, c_relu_b)
            dx, grads[f"s{scale}.conv{b}.w"], grads[f"s{scale}.conv{b}.b"] = layers.conv_backward(dz, c_conv)
    return grads


def bce(probs, labels):
    """Per-sample binary cross entropy summed over both output nodes."""
    clipped = np.clip(probs, LOSS_EPS, 1 - LOSS_EPS)
    terms = labels * np.log(clipped) + (1 - labels) * np.log(1 - clipped)
    return -terms.sum(axis=-1)


def loss(pred, label):
    probs = np.array([pred.p_hat_interictal, pred.p_hat_ictal])
    return float(bce(probs, label.as_array()))


def _dlogits(probs, labels):
    # d bce / d logit = p - y, zero where the clip is active
    inside = (probs > LOSS_EPS) & (probs < 1 - LOSS_EPS)
    return (probs - labels) * inside


def loss_and_grads(features, labels, params, cfg):
    """Mean batch loss and its gradients wrt every parameter."""
    probs, cache = forward_batch(features, params, cfg)
    n = probs.shape[0]
    grads = backward_batch(_dlogits(probs, labels) / n, cache, cfg)
    return float(bce(probs, labels).mean()), grads


def _single(spec):
    tensors = getattr(spec, 'tensors', spec)
    return {s: np.asarray(t)[None] for s, t in tensors.items()}


def forward(spec, params, cfg):
    probs, _ = forward_batch(_single(spec), params, cfg)
    return ProbabilityPair(float(probs[0, 0]), float(probs[0, 1]))


def backward(spec, params, label, cfg):
    _, grads = loss_and_grads(_single(spec), label.as_array()[None], params, cfg)
    return grads


def predict(features, params, cfg, batch_size=256):
    """Batched inference: (N, 2) probabilities."""
    n = check_features(features, cfg)
    out = np.empty((n, 2))
    for i in range(0, n, batch_size):
        chunk = {s: t[i:i + batch_size] for s, t in features.items()}
        out[i:i + batch_size], _ = forward_batch(chunk, params, cfg)
    return out
