"""Log-mel filterbank frontend.

Pinned DSP choices: periodic Hann window, Slaney mel scale (linear below
1 kHz, logarithmic above), peak-normalised triangular filters applied to
the power spectrum, natural log with a 1e-10 floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InputError

LOG_FLOOR = 1e-10

_F_SP = 200.0 / 3.0
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = np.log(6.4) / 27.0


@dataclass(frozen=True)
class FbankConfig:
    sample_rate_hz: int = 16000
    frame_stride_ms: float = 10.0
    frame_length_ms: float = 25.0
    num_mels: int = 80
    fft_size: int = 512
    fmin_hz: float = 0.0
    fmax_hz: float | None = None

    def __post_init__(self):
        if self.num_mels < 1:
            raise ConfigError("num_mels must be >= 1")
        if self.frame_length_ms < self.frame_stride_ms:
            raise ConfigError("frame_length_ms must be >= frame_stride_ms")
        if self.fft_size < self.window_samples:
            raise ConfigError(f"fft_size {self.fft_size} < window of {self.window_samples} samples")
        if not 0 <= self.fmin_hz < self.top_hz <= self.sample_rate_hz / 2:
            raise ConfigError("need 0 <= fmin < fmax <= sample_rate/2")

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.frame_length_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.frame_stride_ms / 1000.0))

    @property
    def top_hz(self) -> float:
        return self.sample_rate_hz / 2 if self.fmax_hz is None else float(self.fmax_hz)

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_samples:
            return 0
        return (num_samples - self.window_samples) // self.hop_samples + 1


@dataclass
class FeatureSequence:
    frames: np.ndarray
    utterance_id: str = ""
    stride_ms: float = 10.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise InputError(f"expected a non-empty T x num_mels matrix, got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise InputError(f"{self.utterance_id}: non-finite feature values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_mels(self) -> int:
        return self.frames.shape[1]


def hz_to_mel(hz):
    hz = np.asarray(hz, dtype=np.float64)
    lin = hz / _F_SP
    log = _MIN_LOG_MEL + np.log(np.maximum(hz, _MIN_LOG_HZ) / _MIN_LOG_HZ) / _LOGSTEP
    return np.where(hz >= _MIN_LOG_HZ, log, lin)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    lin = mel * _F_SP
    log = _MIN_LOG_HZ * np.exp(_LOGSTEP * (mel - _MIN_LOG_MEL))
    return np.where(mel >= _MIN_LOG_MEL, log, lin)


def mel_center_frequencies(cfg: FbankConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.top_hz), cfg.num_mels + 2))
    return edges[1:-1]


def mel_filterbank(cfg: FbankConfig) -> np.ndarray:
    """Triangular filters, shape ``[num_mels, fft_size // 2 + 1]``."""
    bins = np.fft.rfftfreq(cfg.fft_size, d=1.0 / cfg.sample_rate_hz)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.top_hz), cfg.num_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def hann_window(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(waveform: np.ndarray, cfg: FbankConfig) -> np.ndarray:
    win, hop = cfg.window_samples, cfg.hop_samples
    t = cfg.num_frames(len(waveform))
    idx = np.arange(win)[None, :] + hop * np.arange(t)[:, None]
    return waveform[idx]


def extract_fbank(waveform, cfg: FbankConfig = FbankConfig(), utterance_id: str = "") -> FeatureSequence:
    """Log-mel features, ``T = floor((len - window) / hop) + 1`` frames."""
    wav = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if len(wav) < cfg.window_samples:
        raise InputError(
            f"waveform of {len(wav)} samples is shorter than one {cfg.window_samples}-sample window"
        )
    frames = frame_signal(wav, cfg) * hann_window(cfg.window_samples)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    power = spec.real ** 2 + spec.imag ** 2
    mel = power @ mel_filterbank(cfg).T
    return FeatureSequence(np.log(mel + LOG_FLOOR), utterance_id, cfg.frame_stride_ms)
