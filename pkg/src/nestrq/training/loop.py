from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..encoder import EncoderConfig, encode
from ..errors import ConfigError, DegenerateBatchError, DegenerateDataError
from ..features import FeatureSequence
from ..numcore import backward
from ..objectives import (
    apply_mask,
    bestrq_loss,
    masked_token_accuracy,
    nestrq_loss,
    ntp_token_accuracy,
    sample_mask,
)
from ..quantizer import RandomProjectionQuantizer, TokenSequence, quantize, token_stats
from ..serialization import canonical_json, digest
from .optim import clip_by_global_norm
from .schedule import lr_at
from .state import TrainConfig, TrainState, init_train_state

log = logging.getLogger(__name__)


@dataclass
class Batch:
    features: np.ndarray  # [B, T, F], already normalised
    tokens: np.ndarray    # [B, T // 4]
    utterance_ids: list[str]


@dataclass
class MetricsRecord:
    step: int
    loss: float | None
    head_accuracy: list[float]
    lr: float
    grad_norm: float | None
    wall_ms: float | None
    codebook_snapshot: str
    skipped: bool = False

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "loss": self.loss,
            "head_accuracy": self.head_accuracy,
            "lr": self.lr,
            "grad_norm": self.grad_norm,
            "wall_ms": self.wall_ms,
            "codebook_snapshot": self.codebook_snapshot,
            "skipped": self.skipped,
        }

    def to_line(self) -> str:
        return canonical_json(self.to_json())


@dataclass
class PretrainData:
    """Features paired with the tokens quantized from their unmasked frames."""

    features: list[FeatureSequence]
    tokens: list[np.ndarray]

    @classmethod
    def build(cls, features: Sequence[FeatureSequence], quantizer: RandomProjectionQuantizer,
              tokens: Sequence[TokenSequence] | None = None) -> "PretrainData":
        feats = [f for f in features if f.num_frames >= 2 * quantizer.stack]
        if not feats:
            raise DegenerateDataError("no utterance long enough for two token positions")
        if tokens is None:
            toks = [quantize(quantizer, f).tokens for f in feats]
        else:
            by_id = {t.utterance_id: t.tokens for t in tokens}
            toks = []
            for f in feats:
                if f.utterance_id not in by_id:
                    raise ConfigError(f"no tokens for utterance {f.utterance_id!r}")
                t = by_id[f.utterance_id]
                if len(t) != f.num_frames // quantizer.stack:
                    raise ConfigError(f"{f.utterance_id}: token length {len(t)} != floor(T/4)")
                toks.append(t)
        return cls(feats, toks)


def make_batch(state: TrainState, data: PretrainData) -> Batch:
    """Draw utterances and aligned crops from ``state.data_rng``."""
    cfg = state.train_cfg
    stack = state.quantizer.stack
    n = len(data.features)
    idx = state.data_rng.choice(n, size=cfg.batch_utterances, replace=n < cfg.batch_utterances)
    shortest = min(data.features[i].num_frames for i in idx)
    groups = min(cfg.crop_frames, shortest) // stack
    feats, toks = [], []
    for i in idx:
        f, t = data.features[i], data.tokens[i]
        start = int(state.data_rng.integers(0, len(t) - groups + 1))
        feats.append(f.frames[start * stack:(start + groups) * stack])
        toks.append(t[start:start + groups])
    x = state.normalize(np.stack(feats))
    return Batch(x, np.stack(toks), [data.features[i].utterance_id for i in idx])


def _snapshot_id(state: TrainState) -> str:
    return state.meta.get("codebook_snapshot", state.quantizer.fingerprint()[:16])


def train_step(state: TrainState, batch: Batch, with_accuracy: bool = True) -> tuple[TrainState, MetricsRecord]:
    """One forward/backward/clip/Adam update. Degenerate batches are logged and skipped.

    Token accuracies (an extra pass through the heads) are measured with
    the pre-update parameters; ``with_accuracy=False`` leaves them empty.
    """
    cfg = state.train_cfg
    step = state.step + 1
    lr = lr_at(step, cfg)
    t0 = time.perf_counter()
    x = batch.features
    plan = None
    if cfg.objective == "bestrq":
        plan = sample_mask(x.shape[1], cfg.mask, state.mask_rng, state.quantizer.stack, batch=x.shape[0])
        x = apply_mask(x, plan, state.mask_rng, cfg.mask.fill_std)
    for p in state.params.values():
        p.grad = None
    heads = state.heads()
    try:
        O = encode(state.encoder_cfg, state.params, x).O
        if cfg.objective == "nestrq":
            loss = nestrq_loss(O, batch.tokens, state.ntp_cfg, heads)
        else:
            loss = bestrq_loss(O, batch.tokens, plan, heads[0])
    except DegenerateBatchError as err:
        log.warning("step %d skipped: %s", step, err)
        state.step = step
        return state, MetricsRecord(step, None, [], lr, None, None, _snapshot_id(state), skipped=True)

    if not with_accuracy:
        acc = []
    elif cfg.objective == "nestrq":
        acc = [ntp_token_accuracy(O, batch.tokens, heads, n)
               for n in range(1, len(heads) + 1) if n < batch.tokens.shape[-1]]
    else:
        acc = [masked_token_accuracy(O, batch.tokens, plan, heads[0])]
    backward(loss)
    grads = {k: p.grad for k, p in state.params.items() if p.grad is not None}
    grads, norm = clip_by_global_norm(grads, cfg.grad_clip)
    new = state.optimizer.update({k: p.data for k, p in state.params.items()}, grads, lr)
    for k, p in state.params.items():
        p.data = new[k]
    state.step = step

    wall = (time.perf_counter() - t0) * 1000.0 if cfg.record_wall_time else None
    return state, MetricsRecord(step, float(loss.item()), acc, lr, norm, wall, _snapshot_id(state))


def pretrain(
    train_cfg: TrainConfig,
    features: Sequence[FeatureSequence],
    quantizer: RandomProjectionQuantizer,
    encoder_cfg: EncoderConfig,
    tokens: Sequence[TokenSequence] | None = None,
    metrics_path=None,
    on_metrics: Callable[[MetricsRecord], None] | None = None,
    checkpoint_dir=None,
    state: TrainState | None = None,
) -> tuple[TrainState, list[MetricsRecord]]:
    """Run ``train_cfg.steps`` steps (or continue ``state`` up to that many).

    Targets are quantized once from the unmasked features. When
    ``checkpoint_dir`` is given, the final state is written there and, with
    ``checkpoint_every > 0``, intermediate states to
    ``periodic/step-XXXXXX`` below it.
    """
    from .checkpoint import save_checkpoint

    if state is None:
        state = init_train_state(train_cfg, encoder_cfg, quantizer)
    data = PretrainData.build(features, quantizer, tokens)
    stats = token_stats(data.tokens, quantizer.vocab_size)
    state.meta.setdefault("codebook_snapshot", digest({
        "quantizer": quantizer.fingerprint(), "histogram": stats.histogram.tolist(),
    })[:16])

    records: list[MetricsRecord] = []
    sink = open(metrics_path, "a" if state.step else "w", encoding="utf-8") if metrics_path else None
    try:
        while state.step < train_cfg.steps:
            batch = make_batch(state, data)
            logged = (state.step + 1) % train_cfg.log_every == 0 or state.step + 1 == train_cfg.steps
            state, rec = train_step(state, batch, with_accuracy=logged)
            records.append(rec)
            if logged:
                if sink:
                    sink.write(rec.to_line() + "\n")
                if on_metrics:
                    on_metrics(rec)
            if checkpoint_dir and train_cfg.checkpoint_every and rec.step % train_cfg.checkpoint_every == 0:
                save_checkpoint(state, f"{checkpoint_dir}/periodic/step-{rec.step:06d}")
    finally:
        if sink:
            sink.close()
    if records and all(r.skipped for r in records):
        raise DegenerateDataError("every batch was degenerate; no update was made")
    if checkpoint_dir:
        save_checkpoint(state, checkpoint_dir)
    return state, records


def metrics_from_file(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]

