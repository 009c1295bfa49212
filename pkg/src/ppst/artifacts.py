"""Checkpoint tensor storage, content fingerprints, and run manifests.

Tensor files hold little-endian float32 data back to back; a JSON shape index
maps each tensor name to its shape and byte offset. Fingerprints are sha256
over that same canonical float32 encoding, so a fingerprint survives a
save/load round trip.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

TENSOR_FILE = "tensors.bin"
INDEX_FILE = "tensors.json"
MANIFEST_FILE = "manifest.json"


def save_tensors(directory, arrays):
    """Write {name: array} as float32 LE + shape index into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    with open(directory / TENSOR_FILE, "wb") as fh:
        for name in sorted(arrays):
            data = np.ascontiguousarray(arrays[name], dtype="<f4").tobytes()
            fh.write(data)
            index.append({"name": name, "shape": list(np.shape(arrays[name])),
                          "offset": offset, "nbytes": len(data)})
            offset += len(data)
    (directory / INDEX_FILE).write_text(json.dumps(index, indent=1))


def load_tensors(directory):
    """Inverse of save_tensors; returns {name: float64 array}."""
    directory = Path(directory)
    index = json.loads((directory / INDEX_FILE).read_text())
    blob = (directory / TENSOR_FILE).read_bytes()
    out = {}
    for entry in index:
        raw = blob[entry["offset"]: entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
        out[entry["name"]] = arr.astype(np.float64)
    return out


def tensors_fingerprint(arrays):
    """sha256 over names, shapes and canonical float32 bytes, order-independent."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = arrays[name]
        value = arr.value if hasattr(arr, "value") else arr
        h.update(name.encode())
        h.update(str(np.shape(value)).encode())
        h.update(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return h.hexdigest()


def strict_checksum(arrays):
    """sha256 over raw in-memory bytes; detects any bit-level parameter change."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = arrays[name]
        value = arr.value if hasattr(arr, "value") else arr
        h.update(name.encode())
        h.update(np.ascontiguousarray(value).tobytes())
    return h.hexdigest()


def fingerprint_bytes(data):
    return hashlib.sha256(data).hexdigest()


def fingerprint_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def fingerprint_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def fingerprint_json(obj):
    return fingerprint_text(json.dumps(obj, sort_keys=True, default=str))


def write_manifest(directory, manifest):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path


def read_manifest(directory):
    path = Path(directory) / MANIFEST_FILE
    if not path.exists():
        return None
    return json.loads(path.read_text())


def run_is_up_to_date(directory, config_hash, input_fingerprint):
    """True if a finished run with the same config and inputs already exists."""
    manifest = read_manifest(directory)
    if manifest is None:
        return False
    return (manifest.get("config_hash") == config_hash
            and manifest.get("input_fingerprint") == input_fingerprint
            and manifest.get("status") == "complete")


def base_manifest(kind, config_hash, input_fingerprint):
    from . import __version__

    return {
        "kind": kind,
        "config_hash": config_hash,
        "input_fingerprint": input_fingerprint,
        "component_version": __version__,
        "created_unix": time.time(),
        "status": "complete",
        "outputs": [],
    }


class run_lock:
    """Exclusive lock file guarding a run directory against concurrent writers."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"
        self.fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigurationError(
                f"run directory {self.path.parent} is locked by another process"
            ) from None
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False
