"""On-disk formats for features, labels, waveforms and the corpus manifest.

Feature file: one JSON header line ``{"utterance_id", "T", "num_mels",
"stride_ms"}`` followed by ``T * num_mels`` little-endian float32 values.
Manifest: JSON lines ``{"id", "path", "duration_s", "label_path"}`` (plus
the producing config's digest).
"""

from __future__ import annotations

import json
import wave
from pathlib import Path

import numpy as np

from ..errors import InputError
from ..serialization import canonical_json, read_jsonl, write_jsonl
from .fbank import FeatureSequence


def write_feature_file(path, seq: FeatureSequence) -> None:
    header = {
        "utterance_id": seq.utterance_id,
        "T": seq.num_frames,
        "num_mels": seq.num_mels,
        "stride_ms": seq.stride_ms,
    }
    with open(path, "wb") as fh:
        fh.write(canonical_json(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())


def read_feature_file(path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise InputError(f"{path}: missing JSON header line")
    header = json.loads(raw[:nl])
    body = np.frombuffer(raw[nl + 1:], dtype="<f4")
    t, d = header["T"], header["num_mels"]
    if body.size != t * d:
        raise InputError(f"{path}: expected {t * d} values, found {body.size}")
    return FeatureSequence(body.astype(np.float64).reshape(t, d), header["utterance_id"], header["stride_ms"])


def write_labels(path, utterance_id: str, labels) -> None:
    Path(path).write_text(
        canonical_json({"utterance_id": utterance_id, "labels": [int(v) for v in labels]}) + "\n"
    )


def read_labels(path) -> np.ndarray:
    return np.asarray(json.loads(Path(path).read_text())["labels"], dtype=np.int64)


def write_wav(path, waveform, sample_rate_hz: int) -> None:
    """16-bit PCM, peak-normalised to 0.9 full scale (listening copy only)."""
    w = np.asarray(waveform, dtype=np.float64)
    peak = np.abs(w).max() if w.size else 0.0
    scaled = w * (0.9 * 32767 / peak) if peak > 0 else w
    pcm = np.round(scaled).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate_hz)
        fh.writeframes(pcm.tobytes())


def write_manifest(path, rows) -> None:
    write_jsonl(path, rows)


def read_manifest(path) -> list[dict]:
    rows = read_jsonl(path)
    for r in rows:
        for key in ("id", "path", "duration_s", "label_path"):
            if key not in r:
                raise InputError(f"{path}: manifest row missing {key!r}")
    return rows


def resolve(manifest_path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else Path(manifest_path).parent / p
