"""Checkpoint container.

Layout::

    b"BIKELIO-MOE\\n"
    <one line of UTF-8 JSON header>\\n
    <payload: arrays back to back, row-major little-endian float64>

The header holds ``format_version``, the ``config`` block, an ``arrays`` table
of ``{name, kind, shape, offset}`` (offset in bytes into the payload; kind is
``param`` or ``buffer``) and ``sha256`` of the payload.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from ..diffkernel import Tensor
from .config import MoeConfig
from .model import MoeModel, param_layout

MAGIC = b"BIKELIO-MOE\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save(model: MoeModel, path: Path, extra: dict | None = None) -> None:
    entries = [("param", k, p.data) for k, p in model.params.items()]
    entries += [("buffer", k, v) for k, v in sorted(model.buffers.items())]
    table, chunks, offset = [], [], 0
    for kind, name, arr in entries:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "kind": kind, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "arrays": table,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)
    os.replace(tmp, path)


def load(path: Path) -> MoeModel:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    nl = blob.find(b"\n", len(MAGIC))
    if nl < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[len(MAGIC):nl])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {header.get('format_version')}")
    payload = blob[nl + 1:]
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: checksum mismatch")
    cfg = MoeConfig.from_dict(header["config"])

    params, buffers = {}, {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=e["offset"]).astype(np.float64)
        arr = arr.reshape(e["shape"])
        if e["kind"] == "param":
            params[e["name"]] = Tensor(arr, requires_grad=True, name=e["name"])
        else:
            buffers[e["name"]] = arr
    want = {name: shape for name, shape, _, _ in param_layout(cfg)}
    got = {k: p.shape for k, p in params.items()}
    if want != got:
        missing = sorted(set(want) - set(got))
        raise CheckpointError(f"{path}: parameter set does not match config (missing {missing[:3]}...)")
    params = {k: params[k] for k in want}      # canonical order
    return MoeModel(cfg, params=params, buffers=buffers or None)
