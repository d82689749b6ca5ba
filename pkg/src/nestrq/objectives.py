"""BEST-RQ masked prediction and NEST-RQ multi-token next-token prediction.

Both losses take encoder states ``O`` of shape ``[L, d]`` or ``[B, L, d]``
and integer tokens of the matching leading shape. Quantizer targets are
plain integer arrays, so no gradient can reach the quantizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateBatchError, InputError, UsageError
from .features import FeatureSequence
from .numcore import Rng, Tensor, as_tensor, cross_entropy, linear
from .quantizer import TokenSequence

Head = tuple  # (weight [d, V], bias [V])


@dataclass(frozen=True)
class MaskConfig:
    span_ms: float = 400.0
    frame_stride_ms: float = 10.0
    start_prob: float = 0.012
    fill_std: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.start_prob <= 1.0:
            raise ConfigError("start_prob must lie in [0, 1]")
        if self.span_frames < 1:
            raise ConfigError("mask span must cover at least one frame")

    @property
    def span_frames(self) -> int:
        return int(round(self.span_ms / self.frame_stride_ms))


@dataclass(frozen=True)
class NtpConfig:
    num_future: int = 5
    vocab_size: int = 1024

    def __post_init__(self):
        if self.num_future < 1:
            raise ConfigError("num_future (N) must be >= 1")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")


@dataclass
class MaskPlan:
    frames: np.ndarray      # bool [..., T]
    positions: np.ndarray   # bool [..., T // stack]

    @property
    def num_masked_positions(self) -> int:
        return int(self.positions.sum())


def subsampled_mask(frames: np.ndarray, stack: int = 4) -> np.ndarray:
    """Position l is masked iff any of frames stack*l .. stack*l+stack-1 is."""
    t = frames.shape[-1]
    n = t // stack
    return frames[..., : n * stack].reshape(*frames.shape[:-1], n, stack).any(axis=-1)


def sample_mask(num_frames: int, cfg: MaskConfig, rng: Rng, stack: int = 4, batch: int | None = None) -> MaskPlan:
    """Each frame starts a span with probability p; spans are truncated at the end and unioned."""
    if num_frames < 1:
        raise InputError("sample_mask needs T >= 1")
    shape = (num_frames,) if batch is None else (batch, num_frames)
    starts = rng.random(shape) < cfg.start_prob
    # frame t is masked iff a span started in (t - span, t]
    csum = np.cumsum(starts, axis=-1)
    lagged = np.zeros_like(csum)
    s = cfg.span_frames
    lagged[..., s:] = csum[..., :-s] if s < num_frames else 0
    frames = (csum - lagged) > 0
    return MaskPlan(frames, subsampled_mask(frames, stack))


def apply_mask(x, plan: MaskPlan, rng: Rng, fill_std: float = 0.1):
    """Replace masked frames with N(0, fill_std^2) noise; other cells are untouched."""
    seq = x if isinstance(x, FeatureSequence) else None
    frames = seq.frames if seq is not None else np.asarray(x, dtype=np.float64)
    if plan.frames.shape != frames.shape[:-1]:
        raise UsageError(f"mask covers {plan.frames.shape} frames, input has {frames.shape[:-1]}")
    out = frames.copy()
    idx = np.nonzero(plan.frames)
    out[idx] = rng.normal(0.0, fill_std, size=(len(idx[0]), frames.shape[-1]))
    if seq is not None:
        return FeatureSequence(out, seq.utterance_id, seq.stride_ms)
    return out


def init_head(rng: Rng, model_dim: int, vocab_size: int) -> Head:
    limit = np.sqrt(6.0 / (model_dim + vocab_size))
    w = Tensor(rng.uniform(-limit, limit, size=(model_dim, vocab_size)), True)
    return w, Tensor(np.zeros(vocab_size), True)


def init_ntp_heads(rng: Rng, model_dim: int, cfg: NtpConfig) -> list[Head]:
    """N independent affine maps, head n predicting the token n steps ahead."""
    return [init_head(rng, model_dim, cfg.vocab_size) for _ in range(cfg.num_future)]


def _tokens(tokens) -> np.ndarray:
    if isinstance(tokens, TokenSequence):
        return tokens.tokens
    return np.asarray(tokens, dtype=np.int64)


def bestrq_loss(O, tokens, plan: MaskPlan | np.ndarray, head: Head) -> Tensor:
    """Mean cross-entropy of ``head(O[l])`` against ``k_l`` over masked positions only."""
    O = as_tensor(O)
    k = _tokens(tokens)
    pos = plan.positions if isinstance(plan, MaskPlan) else np.asarray(plan, dtype=bool)
    if k.shape != O.shape[:-1] or pos.shape != k.shape:
        raise InputError(f"states {O.shape[:-1]}, tokens {k.shape} and mask {pos.shape} disagree")
    idx = np.nonzero(pos)
    if len(idx[0]) == 0:
        raise DegenerateBatchError("no masked positions in batch")
    logits = linear(O[idx], *head)
    return cross_entropy(logits, k[idx])


def valid_pair_count(length: int, num_future: int) -> int:
    """#{(l, n): 1 <= n <= N, l + n <= L} for 1-based positions l."""
    return sum(max(0, length - n) for n in range(1, num_future + 1))


def nestrq_loss(O, tokens, cfg: NtpConfig, heads: list[Head]) -> Tensor:
    """Mean over valid (l, n) of -log softmax(head_n(O[l]))[k_{l+n}].

    Pairs whose target would fall past the end of the sequence are left
    out rather than padded.
    """
    O = as_tensor(O)
    k = _tokens(tokens)
    if k.shape != O.shape[:-1]:
        raise InputError(f"states {O.shape[:-1]} and tokens {k.shape} disagree")
    if len(heads) != cfg.num_future:
        raise ConfigError(f"{len(heads)} heads for N={cfg.num_future}")
    length = k.shape[-1]
    lead = int(np.prod(k.shape[:-1]))
    count = lead * valid_pair_count(length, cfg.num_future)
    if count == 0:
        raise DegenerateBatchError(f"L={length} leaves no next-token targets")
    total = None
    for n, head in enumerate(heads, start=1):
        if n >= length:
            break
        logits = linear(O[..., : length - n, :], *head)
        term = cross_entropy(logits, k[..., n:], reduction="sum")
        total = term if total is None else total + term
    return total / float(count)


def ntp_token_accuracy(O, tokens, heads: list[Head], n: int) -> float:
    """Fraction of valid positions where head n's argmax (lowest index on ties) equals k_{l+n}."""
    O = as_tensor(O)
    k = _tokens(tokens)
    if not 1 <= n <= len(heads):
        raise ConfigError(f"head index {n} outside 1..{len(heads)}")
    length = k.shape[-1]
    if length - n < 1:
        raise DegenerateBatchError(f"no valid positions for head {n} at L={length}")
    w, b = heads[n - 1]
    logits = O.data[..., : length - n, :] @ w.data + b.data
    return float((logits.argmax(axis=-1) == k[..., n:]).mean())


def masked_token_accuracy(O, tokens, plan: MaskPlan | np.ndarray, head: Head) -> float:
    O = as_tensor(O)
    k = _tokens(tokens)
    pos = plan.positions if isinstance(plan, MaskPlan) else np.asarray(plan, dtype=bool)
    idx = np.nonzero(pos)
    if len(idx[0]) == 0:
        raise DegenerateBatchError("no masked positions")
    logits = O.data[idx] @ head[0].data + head[1].data
    return float((logits.argmax(axis=-1) == k[idx]).mean())
