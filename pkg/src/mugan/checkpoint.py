"""Checkpoint container with stable bytes and atomic writes.

Tensors are stored as (dtype, shape, raw bytes) inside a pickled payload,
prefixed with a magic string and a content digest. Writing the same state
twice produces identical files, which the reproducibility tests rely on;
zip-based serializers do not guarantee that. Writes go through a temp file
and os.replace, so a crash never leaves a half-written checkpoint behind.
"""

from __future__ import annotations

import hashlib
import os
import pickle

import numpy as np
import torch

from .errors import CheckpointCorruptError, CheckpointVersionError

MAGIC = b"MUGANCKPT\x00"
FORMAT_VERSION = 1
_TENSOR_KEY = "__tensor__"

_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "float16": torch.float16,
    "int64": torch.int64,
    "int32": torch.int32,
    "int16": torch.int16,
    "int8": torch.int8,
    "uint8": torch.uint8,
    "bool": torch.bool,
}
_NP_DTYPES = {k: np.dtype(k if k != "bool" else "bool_") for k in _DTYPES}


def _encode(obj):
    if isinstance(obj, torch.Tensor):
        t = obj.detach().cpu().contiguous()
        name = str(t.dtype).removeprefix("torch.")
        if name not in _DTYPES:
            raise CheckpointCorruptError(f"cannot serialize tensor dtype {name}")
        return {
            _TENSOR_KEY: True,
            "dtype": name,
            "shape": tuple(t.shape),
            "data": t.numpy().tobytes(),
        }
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        seq = [_encode(v) for v in obj]
        return seq if isinstance(obj, list) else tuple(seq)
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if obj.get(_TENSOR_KEY):
            arr = np.frombuffer(obj["data"], dtype=_NP_DTYPES[obj["dtype"]])
            t = torch.from_numpy(arr.copy()).reshape(obj["shape"])
            return t.to(_DTYPES[obj["dtype"]])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    if isinstance(obj, tuple):
        return tuple(_decode(v) for v in obj)
    return obj


def save_checkpoint(payload: dict, path) -> None:
    """Serialize a payload dict (tensors allowed anywhere) to `path`."""
    blob = pickle.dumps(
        {"version": FORMAT_VERSION, "payload": _encode(payload)}, protocol=4
    )
    digest = hashlib.sha256(blob).digest()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(digest)
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    """Read a payload written by save_checkpoint, verifying integrity."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise CheckpointCorruptError(f"cannot read checkpoint {path}: {e}") from None
    if len(raw) < len(MAGIC) + 32 or not raw.startswith(MAGIC):
        raise CheckpointCorruptError(f"{path} is not a checkpoint file")
    digest = raw[len(MAGIC) : len(MAGIC) + 32]
    blob = raw[len(MAGIC) + 32 :]
    if hashlib.sha256(blob).digest() != digest:
        raise CheckpointCorruptError(f"{path} failed its integrity check")
    try:
        wrapper = pickle.loads(blob)
        version = wrapper["version"]
        payload = wrapper["payload"]
    except Exception as e:
        raise CheckpointCorruptError(f"{path} cannot be decoded: {e}") from None
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path} has format version {version}, this build reads {FORMAT_VERSION}"
        )
    return _decode(payload)
