"""Versioned named-tensor checkpoint files.

Layout: 8-byte magic, an 8-byte little-endian header length, a UTF-8 JSON
header, then raw little-endian float32 blobs in header directory order.
The header records the format version, model kind, hyperparameters, the
character-vocabulary fingerprint, and a tensor directory of (name, shape,
offset into the blob section). No timestamps: identical state serializes to
identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

MAGIC = b"QXTCKPT1"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupt or incompatible checkpoint."""


@dataclass
class Checkpoint:
    kind: str
    hyperparams: dict
    vocab_fingerprint: str
    tensors: dict[str, np.ndarray]


def save_checkpoint(path, kind: str, tensors: Mapping[str, np.ndarray],
                    hyperparams: dict, vocab_fingerprint: str) -> None:
    directory = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        directory.append({"name": name, "shape": list(data.shape),
                          "offset": offset})
        blobs.append(data.tobytes())
        offset += len(blobs[-1])
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "vocab_fingerprint": vocab_fingerprint,
        "hyperparams": hyperparams,
        "tensors": directory,
    }
    payload = json.dumps(header, sort_keys=True,
                         separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if len(raw) < len(MAGIC) + 8 or not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    hstart = len(MAGIC) + 8
    if hstart + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[hstart:hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')}")
    blob_start = hstart + hlen
    tensors: dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = blob_start + entry["offset"]
        end = start + count * 4
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        arr = np.frombuffer(raw[start:end], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float32)
    return Checkpoint(
        kind=header.get("kind", ""),
        hyperparams=header.get("hyperparams", {}),
        vocab_fingerprint=header.get("vocab_fingerprint", ""),
        tensors=tensors,
    )


def require_vocab(ckpt: Checkpoint, fingerprint: str, path="") -> None:
    if ckpt.vocab_fingerprint != fingerprint:
        raise CheckpointError(
            f"{path or 'checkpoint'}: vocabulary fingerprint mismatch "
            f"(checkpoint {ckpt.vocab_fingerprint[:12]}..., "
            f"runtime {fingerprint[:12]}...)")
