"""Checkpoint persistence: a text manifest plus a raw little-endian float32
blob, exact to the bit on save -> load."""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError
from .optim import ParamStore

MANIFEST_NAME = "manifest.txt"
BLOB_NAME = "params.bin"


def save_checkpoint(dirpath, store: ParamStore, config_hash: str, seed: int):
    """Write manifest + blob; manifest lines are name, shape, byte offset, count."""
    os.makedirs(dirpath, exist_ok=True)
    lines = [f"# config_hash={config_hash}", f"# seed={seed}", "# dtype=float32-le"]
    chunks = []
    offset = 0
    for name, tensor in store.items():
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        raw = arr.tobytes()
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"{name}\t{shape}\t{offset}\t{arr.size}")
        chunks.append(raw)
        offset += len(raw)
    with open(os.path.join(dirpath, MANIFEST_NAME), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(dirpath, BLOB_NAME), "wb") as fh:
        fh.write(b"".join(chunks))


def read_manifest(dirpath):
    path = os.path.join(dirpath, MANIFEST_NAME)
    if not os.path.exists(path):
        raise ConfigError(f"no checkpoint manifest at {path}")
    meta = {}
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            name, shape, offset, count = line.split("\t")
            shape = tuple(int(s) for s in shape.split(",")) if shape else ()
            entries.append((name, shape, int(offset), int(count)))
    return meta, entries


def load_checkpoint(dirpath, store: ParamStore, expected_config_hash: str | None = None):
    """Load values into an already-built store; optimizer state is reset."""
    meta, entries = read_manifest(dirpath)
    if expected_config_hash is not None and meta.get("config_hash") != expected_config_hash:
        raise ConfigError(
            f"checkpoint config hash {meta.get('config_hash')} does not match "
            f"expected {expected_config_hash}"
        )
    names = store.names()
    manifest_names = [e[0] for e in entries]
    if names != manifest_names:
        raise ConfigError(
            "checkpoint parameters do not match the model "
            f"({len(manifest_names)} stored vs {len(names)} expected)"
        )
    blob_path = os.path.join(dirpath, BLOB_NAME)
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    for name, shape, offset, count in entries:
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        store.set_values(name, arr)
    store.reset_optimizer_state()
    return meta
