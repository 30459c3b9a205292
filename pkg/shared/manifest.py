import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from datetime import datetime


def git_blob_hash(path):
    """Content hash computed the way `git hash-object` does."""
    with open(path, 'rb') as f:
        content = f.read()
    header = f"blob {len(content)}\0".encode()
    return hashlib.sha1(header + content).hexdigest()


def hash_inputs(paths):
    hashes = {}
    for path in paths:
        if path and os.path.isfile(path):
            hashes[os.path.basename(path)] = git_blob_hash(path)
    return hashes


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    input_hashes: dict = field(default_factory=dict)
    created_at: str = field(default_factory=lambda: datetime.now().isoformat())

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        if not self.input_hashes:
            self.input_hashes = hash_inputs(self.inputs)
        path = os.path.join(out_dir, f"{self.command}_manifest.json")
        with open(path, 'w') as f:
            json.dump(asdict(self), f, indent=2, default=str)
        return path
