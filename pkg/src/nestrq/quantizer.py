"""Random-projection quantizer and k-means codebooks.

A frozen quantizer turns every group of ``stack`` consecutive frames into
one token: standardise the stacked vector with frozen corpus statistics,
project it with a frozen Xavier-uniform matrix, L2-normalise, and pick the
nearest L2-normalised codebook row (lowest index on ties). Nothing here
ever receives a gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .features import FeatureSequence
from .numcore import Rng
from .serialization import array_from_bytes, array_to_bytes, canonical_json, digest, read_jsonl, write_jsonl

MIN_STANDARDIZER_ROWS = 1000
_STD_FLOOR = 1e-5


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def stack_frames(x: FeatureSequence | np.ndarray, stack: int = 4) -> np.ndarray:
    """``[floor(T/stack), stack*num_mels]``; row l concatenates frames stack*l .. stack*l+stack-1."""
    frames = x.frames if isinstance(x, FeatureSequence) else np.asarray(x, dtype=np.float64)
    t, d = frames.shape
    if t < stack:
        raise InputError(f"need at least {stack} frames to stack, got {t}")
    n = t // stack
    return frames[: n * stack].reshape(n, stack * d)


@dataclass(frozen=True)
class RandomProjectionQuantizer:
    projection: np.ndarray   # [stack*num_mels, dim]
    codebook: np.ndarray     # [V, dim], unit rows
    mean: np.ndarray         # [stack*num_mels]
    std: np.ndarray          # [stack*num_mels]
    stack: int = 4
    seed: int = 0

    @property
    def vocab_size(self) -> int:
        return self.codebook.shape[0]

    @property
    def dim(self) -> int:
        return self.codebook.shape[1]

    @property
    def num_mels(self) -> int:
        return self.projection.shape[0] // self.stack

    def project(self, stacked: np.ndarray) -> np.ndarray:
        """Standardised, projected, unit-normalised vectors ``[L, dim]``."""
        z = ((stacked - self.mean) / self.std) @ self.projection
        norm = np.linalg.norm(z, axis=-1, keepdims=True)
        return z / np.where(norm > 0, norm, 1.0)

    def nearest(self, z: np.ndarray) -> np.ndarray:
        d2 = ((z[:, None, :] - self.codebook[None, :, :]) ** 2).sum(axis=-1)
        return np.argmin(d2, axis=1)  # first minimum = lowest index

    def with_codebook(self, codebook: np.ndarray) -> "RandomProjectionQuantizer":
        """Same projection/standardiser with another (e.g. k-means) codebook, rows normalised."""
        cb = np.asarray(codebook, dtype=np.float64)
        cb = cb / np.linalg.norm(cb, axis=1, keepdims=True)
        return RandomProjectionQuantizer(
            self.projection, _frozen(cb), self.mean, self.std, self.stack, self.seed
        )

    def fingerprint(self) -> str:
        return digest({
            "stack": self.stack, "seed": self.seed,
            "arrays": [array_to_bytes(a).hex() for a in (self.projection, self.codebook, self.mean, self.std)],
        })


@dataclass
class TokenSequence:
    tokens: np.ndarray
    utterance_id: str = ""
    vocab_size: int = 0

    def __len__(self) -> int:
        return len(self.tokens)


def fit_standardizer(sample: Iterable[FeatureSequence] | np.ndarray, stack: int = 4,
                     min_rows: int = MIN_STANDARDIZER_ROWS) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean/std of stacked frames."""
    if isinstance(sample, np.ndarray):
        rows = sample
    else:
        rows = np.concatenate([stack_frames(x, stack) for x in sample if x.num_frames >= stack])
    if rows.shape[0] < min_rows:
        raise ConfigError(
            f"standardizer needs >= {min_rows} stacked frames, sample has {rows.shape[0]}"
        )
    return rows.mean(axis=0), np.maximum(rows.std(axis=0), _STD_FLOOR)


def init_quantizer(
    seed: int,
    sample: Iterable[FeatureSequence] | np.ndarray,
    stack: int = 4,
    num_mels: int = 80,
    dim: int = 16,
    vocab_size: int = 1024,
    min_standardizer_rows: int = MIN_STANDARDIZER_ROWS,
) -> RandomProjectionQuantizer:
    """Draw projection and codebook from ``Rng(seed).fork("quantizer")`` and fit the standardiser.

    ``sample`` is either feature sequences or an already stacked
    ``[rows, stack*num_mels]`` array.
    """
    if vocab_size < 2:
        raise ConfigError("vocab_size must be >= 2")
    if dim < 1 or stack < 1 or num_mels < 1:
        raise ConfigError("dim, stack and num_mels must be >= 1")
    mean, std = fit_standardizer(sample, stack, min_standardizer_rows)
    if mean.shape != (stack * num_mels,):
        raise ConfigError(f"sample has {mean.shape[0]} stacked dims, expected {stack * num_mels}")
    rng = Rng(seed).fork("quantizer")
    fan_in, fan_out = stack * num_mels, dim
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    projection = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    codebook = rng.normal(size=(vocab_size, dim))
    norms = np.linalg.norm(codebook, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ConfigError("degenerate zero codebook row")
    return RandomProjectionQuantizer(
        _frozen(projection), _frozen(codebook / norms), _frozen(mean), _frozen(std), stack, int(seed)
    )


def quantize(q: RandomProjectionQuantizer, x: FeatureSequence | np.ndarray) -> TokenSequence:
    """Token ids, one per full group of ``q.stack`` frames."""
    stacked = stack_frames(x, q.stack)
    tokens = q.nearest(q.project(stacked)).astype(np.int64)
    uid = x.utterance_id if isinstance(x, FeatureSequence) else ""
    return TokenSequence(tokens, uid, q.vocab_size)


def assign_nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid per point (squared Euclidean, lowest index on ties)."""
    d2 = (
        (points ** 2).sum(axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + (centroids ** 2).sum(axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


@dataclass
class KMeansCodebook:
    centroids: np.ndarray
    inertia_history: list[float]
    labels: np.ndarray

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _kmeans_pp(points: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    m = points.shape[0]
    centers = [points[int(rng.integers(0, m))]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(0, m))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, m - 1)
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def build_kmeans_codebook(representations, vocab_size: int, max_iters: int = 50, seed: int = 0,
                          tol: float = 0.0) -> KMeansCodebook:
    """Lloyd's algorithm from k-means++ seeds.

    An empty cluster is re-seeded with the point farthest from its current
    centroid, which can only lower the inertia, so the recorded inertia
    never increases.
    """
    x = np.asarray(representations, dtype=np.float64)
    m = x.shape[0]
    if m < vocab_size:
        raise InputError(f"need at least {vocab_size} points for {vocab_size} centroids, got {m}")
    rng = Rng(seed).fork("kmeans")
    c = _kmeans_pp(x, vocab_size, rng)
    labels = assign_nearest(x, c)
    history = [float(((x - c[labels]) ** 2).sum())]
    for _ in range(max_iters):
        new = c.copy()
        counts = np.bincount(labels, minlength=vocab_size)
        sums = np.zeros_like(c)
        np.add.at(sums, labels, x)
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        taken: set[int] = set()
        for j in np.flatnonzero(~filled):
            dist = ((x - new[labels]) ** 2).sum(axis=1)
            dist[list(taken)] = -1.0
            far = int(np.argmax(dist))
            taken.add(far)
            new[j] = x[far]
            labels[far] = j
        labels = assign_nearest(x, new)
        inertia = float(((x - new[labels]) ** 2).sum())
        c = new
        history.append(inertia)
        if history[-2] - inertia <= tol * history[-2]:
            break
    return KMeansCodebook(c, history, labels)


@dataclass
class CodebookStats:
    histogram: np.ndarray
    utilization: float
    entropy_bits: float

    def to_json(self) -> dict:
        return {
            "utilization": self.utilization,
            "entropy_bits": self.entropy_bits,
            "vocab_size": int(len(self.histogram)),
            "num_tokens": int(self.histogram.sum()),
            "histogram": [int(v) for v in self.histogram],
        }


def token_stats(tokens: Sequence[TokenSequence] | Sequence[np.ndarray], vocab_size: int) -> CodebookStats:
    arrs = [t.tokens if isinstance(t, TokenSequence) else np.asarray(t) for t in tokens]
    flat = np.concatenate(arrs) if arrs else np.zeros(0, dtype=np.int64)
    if flat.size == 0:
        raise InputError("token_stats needs at least one token")
    hist = np.bincount(flat, minlength=vocab_size)
    p = hist[hist > 0] / flat.size
    entropy = float(-(p * np.log2(p)).sum()) + 0.0
    return CodebookStats(hist, float((hist > 0).sum() / vocab_size), entropy)


# --- files -----------------------------------------------------------------

def write_token_file(path, seqs: Sequence[TokenSequence]) -> None:
    write_jsonl(path, [
        {"utterance_id": s.utterance_id, "V": s.vocab_size, "tokens": [int(v) for v in s.tokens]}
        for s in seqs
    ])


def read_token_file(path) -> list[TokenSequence]:
    return [TokenSequence(np.asarray(r["tokens"], dtype=np.int64), r["utterance_id"], r["V"])
            for r in read_jsonl(path)]


_QUANTIZER_BLOBS = ("projection", "codebook", "mean", "std")


def save_quantizer(path, q: RandomProjectionQuantizer, dtype: str = "float64", extra: dict | None = None) -> None:
    """JSON header line then the four little-endian blobs back to back."""
    header = {
        "format": "nestrq-quantizer/1",
        "seed": q.seed, "stack": q.stack, "dim": q.dim, "V": q.vocab_size, "num_mels": q.num_mels,
        "dtype": dtype,
        "shapes": {k: list(getattr(q, k).shape) for k in _QUANTIZER_BLOBS},
        "order": list(_QUANTIZER_BLOBS),
    }
    if extra:
        header.update(extra)
    with open(path, "wb") as fh:
        fh.write(canonical_json(header).encode("utf-8") + b"\n")
        for k in _QUANTIZER_BLOBS:
            fh.write(array_to_bytes(getattr(q, k), dtype))


def load_quantizer(path) -> RandomProjectionQuantizer:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    header = json.loads(raw[:nl])
    width = 8 if header["dtype"] == "float64" else 4
    pos = nl + 1
    arrays = {}
    for k in header["order"]:
        shape = header["shapes"][k]
        n = int(np.prod(shape)) * width
        arrays[k] = _frozen(array_from_bytes(raw[pos:pos + n], shape, header["dtype"]))
        pos += n
    if pos != len(raw):
        raise InputError(f"{path}: trailing bytes after quantizer blobs")
    return RandomProjectionQuantizer(
        arrays["projection"], arrays["codebook"], arrays["mean"], arrays["std"],
        header["stack"], header["seed"],
    )
