"""Canonical JSON, content digests and little-endian array blobs."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest(obj) -> str:
    """sha256 of the canonical JSON encoding."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dir_digest(path) -> str:
    """Digest over relative file names and contents, order-independent of the filesystem."""
    root = Path(path)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(b"\0")
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


DTYPES = {"float32": "<f4", "float64": "<f8"}


def array_to_bytes(a: np.ndarray, dtype: str = "float64") -> bytes:
    return np.ascontiguousarray(a, dtype=DTYPES[dtype]).tobytes()


def array_from_bytes(raw: bytes, shape, dtype: str = "float64") -> np.ndarray:
    return np.frombuffer(raw, dtype=DTYPES[dtype]).astype(np.float64).reshape(shape)


def write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(canonical_json(row) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
