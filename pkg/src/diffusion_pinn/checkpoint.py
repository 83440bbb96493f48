"""Checkpoint container for network parameters.

Layout::

    DPINN-CHECKPOINT 1
    { ... JSON header, human readable ... }
    END-HEADER
    <raw little-endian float64 bytes of each array, in header order>

The header records the architecture widths, the input dimension, the seed, the
iteration count, free-form metadata (target spec, training mode) and, for every
array, its name, shape and byte offset into the payload.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from diffusion_pinn.errors import CheckpointError
from diffusion_pinn.neural_core import input_dim, widths_from_params

MAGIC = b"DPINN-CHECKPOINT 1\n"
END = b"\nEND-HEADER\n"
FORMAT_VERSION = 1


def save_checkpoint(path, params, *, seed, iteration, metadata=None):
    """Write ``params`` to ``path`` atomically (temp file + rename)."""
    path = Path(path)
    arrays = []
    offset = 0
    blobs = []
    for name in sorted(params):
        arr = np.ascontiguousarray(np.asarray(params[name], dtype="<f8"))
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"refusing to save non-finite array {name!r}")
        arrays.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": FORMAT_VERSION,
        "dtype": "<f8",
        "d": input_dim(params),
        "widths": widths_from_params(params),
        "seed": int(seed),
        "iteration": int(iteration),
        "metadata": metadata or {},
        "arrays": arrays,
        "payload_bytes": offset,
    }
    text = json.dumps(header, indent=1, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(text)
        fh.write(END)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)
    return path


def read_header(path):
    """Parse only the header of a checkpoint."""
    return _split(Path(path).read_bytes())[0]


def load_checkpoint(path):
    """Return ``(params, header)``; raises :class:`CheckpointError` on any defect."""
    raw = Path(path).read_bytes()
    header, payload = _split(raw)
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(
            f"{path}: payload has {len(payload)} bytes, header declares {header.get('payload_bytes')}"
        )
    params = {}
    try:
        for entry in header["arrays"]:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = int(entry["offset"])
            chunk = payload[start : start + 8 * count]
            if len(chunk) != 8 * count:
                raise CheckpointError(f"{path}: array {entry['name']!r} is truncated")
            arr = np.frombuffer(chunk, dtype="<f8").reshape(shape)
            params[entry["name"]] = jnp.asarray(arr.astype(np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed array table ({exc})") from exc
    try:
        widths = widths_from_params(params)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if widths != header.get("widths") or widths["embx"][0] != header.get("d"):
        raise CheckpointError(f"{path}: array shapes disagree with declared architecture")
    return params, header


def _split(raw):
    if not raw.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic line)")
    end = raw.find(END, len(MAGIC))
    if end < 0:
        raise CheckpointError("checkpoint header is not terminated")
    try:
        header = json.loads(raw[len(MAGIC) : end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_VERSION:
        raise CheckpointError("unsupported checkpoint format version")
    for key in ("d", "widths", "seed", "iteration", "arrays", "payload_bytes"):
        if key not in header:
            raise CheckpointError(f"checkpoint header lacks {key!r}")
    return header, raw[end + len(END) :]
