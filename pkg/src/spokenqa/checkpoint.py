"""Deterministic parameter checkpoints.

Layout: one magic line, one JSON manifest line (sorted keys, tensor entries in
name order), then the raw little-endian float64 buffers concatenated in
manifest order. Identical parameters produce identical bytes, so fingerprints
double as model identity.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"SPOKENQA-CKPT-1\n"


def _as_array(value):
    return value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)


def save_params(path, params, meta=None):
    """Write a name -> tensor map plus a JSON-safe meta dict."""
    names = sorted(params)
    manifest = {
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(_as_array(params[n]).shape)} for n in names],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(blob)
        fh.write(b"\n")
        for n in names:
            arr = np.ascontiguousarray(_as_array(params[n]), dtype="<f8")
            fh.write(arr.tobytes())
    os.replace(tmp, path)


def load_params(path):
    """Return (name -> float64 ndarray, meta)."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path} is not a parameter checkpoint")
        manifest = json.loads(fh.readline().decode("utf-8"))
        out = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise DataError(f"{path} truncated at tensor {entry['name']}")
            out[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out, manifest["meta"]


def fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def params_fingerprint(params) -> str:
    """Fingerprint of in-memory parameters, matching save+fingerprint."""
    h = hashlib.sha256()
    for n in sorted(params):
        arr = np.ascontiguousarray(_as_array(params[n]), dtype="<f8")
        h.update(n.encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()


def assign_params(params, loaded):
    """Copy loaded arrays into live tensors; shape mismatches are errors."""
    missing = sorted(set(params) - set(loaded))
    extra = sorted(set(loaded) - set(params))
    if missing or extra:
        raise DataError(f"checkpoint mismatch; missing {missing[:3]}, unexpected {extra[:3]}")
    for name, tensor in params.items():
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise DataError(
                f"checkpoint tensor {name} has shape {arr.shape}, expected {tensor.data.shape}"
            )
        tensor.data = arr.copy()
