"""Deterministic synthetic speech-like corpus with frame-level ground truth.

An utterance is a walk over ``S`` hidden states. Each state owns a
spectral template (a few partials with fixed frequencies and amplitudes);
a dwell segment renders its state's partials with fresh random phases and
a slow amplitude jitter, and white noise is added on top. Frame labels
give the state active at each frame's first sample, which is what the
linear probe tries to recover.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..numcore import Rng
from .fbank import FbankConfig, FeatureSequence, extract_fbank


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    num_utterances: int = 64
    min_duration_s: float = 2.0
    max_duration_s: float = 4.0
    num_states: int = 8
    partials_per_state: int = 3
    min_partial_hz: float = 150.0
    max_partial_hz: float = 4000.0
    min_dwell_s: float = 0.08
    max_dwell_s: float = 0.40
    noise_level: float = 0.3
    sample_rate_hz: int = 16000
    seed: int = 5

    def __post_init__(self):
        if self.num_utterances < 0:
            raise ConfigError("num_utterances must be >= 0")
        if self.num_states < 1:
            raise ConfigError("num_states must be >= 1")
        if not 0 < self.min_duration_s <= self.max_duration_s:
            raise ConfigError("durations must be positive with min <= max")
        if not 0 < self.min_dwell_s <= self.max_dwell_s:
            raise ConfigError("dwell times must be positive with min <= max")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")
        if not 0 < self.min_partial_hz < self.max_partial_hz < self.sample_rate_hz / 2:
            raise ConfigError("partial frequency range must sit below Nyquist")


@dataclass
class StateTemplate:
    frequencies_hz: np.ndarray
    amplitudes: np.ndarray


@dataclass
class Utterance:
    utterance_id: str
    waveform: np.ndarray
    segments: list[tuple[int, int, int]]  # (start_sample, end_sample, state)
    labels: np.ndarray  # one state id per fbank frame
    sample_rate_hz: int = 16000
    features: FeatureSequence | None = field(default=None, repr=False)

    @property
    def duration_s(self) -> float:
        return len(self.waveform) / self.sample_rate_hz


def state_templates(cfg: SyntheticCorpusConfig) -> list[StateTemplate]:
    rng = Rng(cfg.seed).fork("data").fork("templates")
    lo, hi = np.log(cfg.min_partial_hz), np.log(cfg.max_partial_hz)
    out = []
    for _ in range(cfg.num_states):
        freqs = np.sort(np.exp(rng.uniform(lo, hi, cfg.partials_per_state)))
        amps = rng.uniform(0.3, 1.0, cfg.partials_per_state)
        out.append(StateTemplate(freqs, amps))
    return out


def _walk_segments(rng: Rng, num_samples: int, cfg: SyntheticCorpusConfig) -> list[tuple[int, int, int]]:
    sr = cfg.sample_rate_hz
    lo, hi = int(round(cfg.min_dwell_s * sr)), int(round(cfg.max_dwell_s * sr))
    segs = []
    state = int(rng.integers(0, cfg.num_states))
    pos = 0
    while pos < num_samples:
        dwell = int(rng.integers(lo, hi + 1))
        end = min(num_samples, pos + dwell)
        segs.append((pos, end, state))
        pos = end
        if cfg.num_states > 1:
            step = int(rng.integers(1, cfg.num_states))
            state = (state + step) % cfg.num_states
    return segs


def labels_from_segments(segments, num_frames: int, hop: int) -> np.ndarray:
    """State active at sample ``t * hop`` for each frame t."""
    starts = np.array([s for s, _, _ in segments])
    states = np.array([k for _, _, k in segments])
    idx = np.searchsorted(starts, hop * np.arange(num_frames), side="right") - 1
    return states[idx].astype(np.int64)


def synthesize_utterance(
    index: int,
    cfg: SyntheticCorpusConfig,
    templates: list[StateTemplate],
    fbank: FbankConfig,
) -> Utterance:
    utt_id = f"utt-{index:05d}"
    rng = Rng(cfg.seed).fork("data").fork(utt_id)
    sr = cfg.sample_rate_hz
    dur = rng.uniform(cfg.min_duration_s, cfg.max_duration_s)
    n = max(int(round(dur * sr)), fbank.window_samples)
    segs = _walk_segments(rng, n, cfg)
    wav = np.zeros(n)
    for start, end, state in segs:
        tpl = templates[state]
        t = np.arange(end - start) / sr
        phases = rng.uniform(0.0, 2 * np.pi, len(tpl.frequencies_hz))
        jitter = rng.uniform(0.8, 1.2, len(tpl.frequencies_hz))
        wav[start:end] = np.sin(2 * np.pi * tpl.frequencies_hz[:, None] * t + phases[:, None]).T @ (
            tpl.amplitudes * jitter
        )
    if cfg.noise_level > 0:
        wav = wav + cfg.noise_level * rng.normal(size=n)
    feats = extract_fbank(wav, fbank, utt_id)
    labels = labels_from_segments(segs, feats.num_frames, fbank.hop_samples)
    return Utterance(utt_id, wav, segs, labels, sr, feats)


def generate_corpus(cfg: SyntheticCorpusConfig, fbank: FbankConfig | None = None) -> list[Utterance]:
    """All utterances of the corpus, each with waveform, segments, labels and features."""
    fbank = fbank or FbankConfig(sample_rate_hz=cfg.sample_rate_hz)
    if fbank.sample_rate_hz != cfg.sample_rate_hz:
        raise ConfigError("corpus and fbank sample rates differ")
    templates = state_templates(cfg)
    return [synthesize_utterance(i, cfg, templates, fbank) for i in range(cfg.num_utterances)]
