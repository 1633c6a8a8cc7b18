"""Model checkpoint container.

Byte layout (all integers and floats little-endian):

    offset 0   magic bytes b"TMA1"
    offset 4   u32 format version (currently 1)
    offset 8   u32 d (feature dimension, matrix columns)
    offset 12  u32 r (matrix rows)
    offset 16  six float64 row-major r*d matrices, in order K, P, U, V, Lam, Psi
    trailer    UTF-8 JSON object holding the trainer configuration; read to EOF

Writes are atomic (temp file + rename) so a crash never leaves a torn
checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .core import ModelState
from .trainer import TrainerConfig

MAGIC = b"TMA1"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, state: ModelState, cfg: TrainerConfig) -> None:
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, state.d, state.r)
    trailer = json.dumps({
        "alpha": cfg.alpha, "beta": cfg.beta, "eta": cfg.eta, "rho": cfg.rho,
        "epochs": cfg.epochs, "iters_per_epoch": cfg.iters_per_epoch,
        "seed": cfg.seed,
    }).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        for m in (state.K, state.P, state.U, state.V, state.Lam, state.Psi):
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
        fh.write(trailer)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[ModelState, TrainerConfig]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, d, r = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    mat_bytes = r * d * 8
    body_end = _HEADER.size + 6 * mat_bytes
    if len(blob) < body_end:
        raise CheckpointError(f"{path}: truncated matrix body")
    mats = []
    for k in range(6):
        off = _HEADER.size + k * mat_bytes
        m = np.frombuffer(blob[off:off + mat_bytes], dtype="<f8").reshape(r, d)
        mats.append(m.astype(np.float64, copy=True))
    try:
        raw = json.loads(blob[body_end:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad config trailer: {exc}") from exc
    cfg = TrainerConfig(**raw)
    return ModelState(*mats), cfg
