import json
import os

import numpy as np

from model.network import ModelConfig, ModelParams, param_shapes
from shared.config import CHECKPOINT_DIR
from shared.console import log
from shared.errors import DataError

CHECKPOINT_FORMAT = 'm3dcnn-checkpoint'
CHECKPOINT_VERSION = 1
PAYLOAD_SUFFIX = '.f64'


class CheckpointManager:
    """Model checkpoints as `<name>.json` header + `<name>.f64` payload.

    The payload holds little-endian float64 values: every parameter tensor in
    canonical order, then the first moments, then the second moments. The
    header carries no wall-clock values so identical runs write identical
    bytes.
    """

    def __init__(self, checkpoint_dir=CHECKPOINT_DIR):
        self.checkpoint_dir = checkpoint_dir
        os.makedirs(self.checkpoint_dir, exist_ok=True)

    def _paths(self, name):
        base = os.path.join(self.checkpoint_dir, name)
        return base + '.json', base + PAYLOAD_SUFFIX

    def save_checkpoint(self, name, params, cfg, seed, extra=None):
        header_path, payload_path = self._paths(name)
        order = param_shapes(cfg)
        for pname, shape in order:
            if pname not in params.tensors or params.tensors[pname].shape != tuple(shape):
                raise DataError(f"parameter '{pname}' does not match the model config")

        header = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "model_config": cfg.to_dict(),
            "seed": seed,
            "step": params.step,
            "tensors": [[pname, list(shape)] for pname, shape in order],
            "includes_moments": True,
        }
        if extra:
            header["extra"] = extra

        with open(header_path, 'w') as f:
            json.dump(header, f, indent=2, sort_keys=True)

        chunks = []
        for store in (params.tensors, params.m, params.v):
            chunks.extend(store[pname].ravel() for pname, _ in order)
        payload = np.concatenate(chunks).astype('<f8')
        with open(payload_path, 'wb') as f:
            f.write(payload.tobytes())

        log('CHECKPOINT', f"saved '{name}' ({params.n_parameters()} parameters, step {params.step})", level='debug')
        return header_path

    def read_header(self, name):
        header_path, _ = self._paths(name)
        try:
            with open(header_path, 'r') as f:
                header = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read checkpoint header {header_path}: {e}")
        if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"{header_path} is not a version {CHECKPOINT_VERSION} model checkpoint")
        return header

    def load_checkpoint(self, name, expected_cfg=None):
        """Returns (params, cfg, header). Raises DataError on any mismatch."""
        header = self.read_header(name)
        cfg = ModelConfig.from_dict(header["model_config"])
        if expected_cfg is not None and expected_cfg != cfg:
            raise DataError(f"checkpoint '{name}' was trained with a different model config")

        order = param_shapes(cfg)
        if [[n, list(s)] for n, s in order] != header["tensors"]:
            raise DataError(f"checkpoint '{name}' tensor list disagrees with its model config")

        _, payload_path = self._paths(name)
        try:
            with open(payload_path, 'rb') as f:
                raw = f.read()
        except OSError as e:
            raise DataError(f"missing checkpoint payload {payload_path}: {e}")

        sizes = [int(np.prod(s)) for _, s in order]
        per_store = sum(sizes)
        if len(raw) != 3 * per_store * 8:
            raise DataError(
                f"checkpoint payload length mismatch: expected {3 * per_store * 8} bytes, got {len(raw)}")

        flat = np.frombuffer(raw, dtype='<f8').astype(np.float64)
        stores = []
        for k in range(3):
            offset = k * per_store
            store = {}
            for (pname, shape), size in zip(order, sizes):
                store[pname] = flat[offset:offset + size].reshape(shape).copy()
                offset += size
            stores.append(store)

        params = ModelParams(stores[0], stores[1], stores[2], int(header["step"]))
        return params, cfg, header

    def list_checkpoints(self):
        checkpoints = []
        if not os.path.exists(self.checkpoint_dir):
            return checkpoints
        for item in sorted(os.listdir(self.checkpoint_dir)):
            if not item.endswith('.json'):
                continue
            name = item[:-len('.json')]
            try:
                header = self.read_header(name)
            except DataError:
                continue
            checkpoints.append({"name": name, "seed": header["seed"], "step": header["step"]})
        return checkpoints

    def delete_checkpoint(self, name):
        removed = False
        for path in self._paths(name):
            if os.path.exists(path):
                os.remove(path)
                removed = True
        return removed
