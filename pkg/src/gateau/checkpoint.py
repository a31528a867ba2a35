"""Checkpoint container.

Layout: a magic line, one line of JSON metadata (format version, model
config, training metadata, tensor manifest with shapes and byte offsets,
payload size and SHA-256), then the raw little-endian float32 payloads in
manifest order.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .model import FORMAT_VERSION, GateauNet, ModelConfig

MAGIC = b"GATEAU-CHECKPOINT\n"


class CheckpointError(Exception):
    pass


class ChecksumError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_bytes(net: GateauNet) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in net.state_arrays().items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": net.config_dict(),
        "metadata": net.metadata,
        "tensors": manifest,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    return MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + payload


def save_checkpoint(net: GateauNet, path: str | os.PathLike) -> None:
    atomic_write(path, checkpoint_bytes(net))


def load_checkpoint(path: str | os.PathLike) -> GateauNet:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise ChecksumError(f"{path}: truncated header")
    try:
        header = json.loads(data[len(MAGIC):end])
    except json.JSONDecodeError as exc:
        raise ChecksumError(f"{path}: corrupt header ({exc})") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    payload = data[end + 1:]
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")

    net = GateauNet(ModelConfig(**header["config"]), seed=0, dtype=np.float32)
    net.metadata = header.get("metadata", {})
    expected = net.state_arrays()
    seen = set()
    for entry in header["tensors"]:
        name = entry["name"]
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(entry["shape"])
        if name not in expected or expected[name].shape != arr.shape:
            raise CheckpointError(f"{path}: unexpected tensor {name} {arr.shape}")
        if name.startswith("bn:"):
            layer, stat = name[3:].rsplit(".", 1)
            setattr(net.bn[layer], stat, arr.copy())
        else:
            net.params[name] = arr.copy()
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)[:3]}")
    return net
