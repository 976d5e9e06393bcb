"""Versioned, checksummed parameter files.

Layout: one ASCII header line ``LAWPROMPT-CKPT <version> sha256=<hex>``
followed by a JSON body. Arrays are stored as base64 of their float64
little-endian bytes with an explicit shape, so a round trip is bit-exact.
The checksum covers the body bytes, which makes truncation and bit rot
detectable before any parsing.
"""
from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError

FORMAT_VERSION = 1
_MAGIC = "LAWPROMPT-CKPT"


@dataclass
class Checkpoint:
    kind: str
    params: dict[str, np.ndarray]
    vocab_hash: str
    dims: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    body = {
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "vocab_hash": ckpt.vocab_hash,
        "dims": ckpt.dims,
        "meta": ckpt.meta,
        "params": {k: _encode_array(v) for k, v in sorted(ckpt.params.items())},
    }
    payload = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = f"{_MAGIC} {FORMAT_VERSION} sha256={hashlib.sha256(payload).hexdigest()}\n"
    return header.encode("ascii") + payload


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path, expected_vocab_hash: str | None = None, kind: str | None = None) -> Checkpoint:
    """Read and verify a checkpoint.

    Raises:
        CheckpointError: missing file, unknown version, checksum mismatch
            (including truncation), wrong kind or vocabulary hash.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    header, sep, payload = raw.partition(b"\n")
    parts = header.decode("ascii", errors="replace").split()
    if not sep or len(parts) != 3 or parts[0] != _MAGIC or not parts[2].startswith("sha256="):
        raise CheckpointError(f"{path}: not a checkpoint file")
    if parts[1] != str(FORMAT_VERSION):
        raise CheckpointError(f"{path}: unsupported format version {parts[1]}")
    if hashlib.sha256(payload).hexdigest() != parts[2][len("sha256="):]:
        raise CheckpointError(f"{path}: checksum mismatch (file truncated or corrupted)")
    try:
        body = json.loads(payload)
        params = {k: _decode_array(v) for k, v in body["params"].items()}
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed body: {exc}") from exc
    if body.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {body.get('format_version')}")
    if kind is not None and body["kind"] != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {body['kind']!r}")
    if expected_vocab_hash is not None and body["vocab_hash"] != expected_vocab_hash:
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    return Checkpoint(body["kind"], params, body["vocab_hash"], body.get("dims", {}), body.get("meta", {}))


def params_equal(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> bool:
    """Bitwise equality of two parameter dicts."""
    if a.keys() != b.keys():
        return False
    return all(a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)
