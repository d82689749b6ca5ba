from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from ..encoder import EncoderConfig, Params, init_encoder_params
from ..errors import ConfigError
from ..numcore import Rng, Tensor
from ..objectives import MaskConfig, NtpConfig, init_head, init_ntp_heads
from ..quantizer import RandomProjectionQuantizer
from ..serialization import digest
from .optim import Adam


@dataclass(frozen=True)
class TrainConfig:
    objective: Literal["bestrq", "nestrq"] = "nestrq"
    steps: int = 2000
    batch_utterances: int = 8
    crop_frames: int = 192
    peak_lr: float = 3e-4
    warmup_steps: int = 200
    scheduler: Literal["transformer", "linear"] = "transformer"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    grad_clip: float = 1.0
    num_future: int = 5
    mask: MaskConfig = field(default_factory=MaskConfig)
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0
    record_wall_time: bool = False

    def __post_init__(self):
        if self.objective not in ("bestrq", "nestrq"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.scheduler not in ("transformer", "linear"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.peak_lr <= 0:
            raise ConfigError("peak_lr must be > 0")
        if self.steps < 0 or self.batch_utterances < 1 or self.log_every < 1:
            raise ConfigError("steps >= 0, batch_utterances >= 1 and log_every >= 1 required")
        if self.crop_frames < 8:
            raise ConfigError("crop_frames must be >= 8 (two subsampled positions)")
        if self.num_future < 1:
            raise ConfigError("num_future must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("mask"), dict):
            d["mask"] = MaskConfig(**d["mask"])
        return cls(**d)


@dataclass
class TrainState:
    """Everything needed to continue a run bit-exactly."""

    train_cfg: TrainConfig
    encoder_cfg: EncoderConfig
    params: Params
    optimizer: Adam
    quantizer: RandomProjectionQuantizer
    input_mean: np.ndarray
    input_std: np.ndarray
    data_rng: Rng
    mask_rng: Rng
    step: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return self.quantizer.vocab_size

    @property
    def ntp_cfg(self) -> NtpConfig:
        return NtpConfig(self.train_cfg.num_future, self.vocab_size)

    def heads(self) -> list[tuple[Tensor, Tensor]]:
        if self.train_cfg.objective == "nestrq":
            return [(self.params[f"ntp.{n}.weight"], self.params[f"ntp.{n}.bias"])
                    for n in range(1, self.train_cfg.num_future + 1)]
        return [(self.params["mlm.weight"], self.params["mlm.bias"])]

    def encoder_params(self) -> Params:
        return {k: v for k, v in self.params.items() if not k.startswith(("ntp.", "mlm."))}

    def normalize(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.input_mean) / self.input_std

    def config_digest(self) -> str:
        return digest({
            "train": self.train_cfg.to_json(),
            "encoder": self.encoder_cfg.to_json(),
            "quantizer": self.quantizer.fingerprint(),
        })


def input_normalizer(q: RandomProjectionQuantizer) -> tuple[np.ndarray, np.ndarray]:
    """Per-mel encoder-input statistics folded out of the quantizer's stacked standardiser."""
    f = q.num_mels
    mean = q.mean.reshape(q.stack, f).mean(axis=0)
    var = (q.std.reshape(q.stack, f) ** 2 + q.mean.reshape(q.stack, f) ** 2).mean(axis=0) - mean ** 2
    return mean, np.sqrt(np.maximum(var, 1e-10))


def init_train_state(train_cfg: TrainConfig, encoder_cfg: EncoderConfig,
                     quantizer: RandomProjectionQuantizer) -> TrainState:
    if quantizer.num_mels != encoder_cfg.num_mels:
        raise ConfigError(
            f"quantizer expects {quantizer.num_mels} mels, encoder {encoder_cfg.num_mels}"
        )
    root = Rng(train_cfg.seed)
    init = root.fork("init")
    params = dict(init_encoder_params(encoder_cfg, init))
    head_rng = init.fork("heads")
    if train_cfg.objective == "nestrq":
        heads = init_ntp_heads(head_rng, encoder_cfg.model_dim,
                               NtpConfig(train_cfg.num_future, quantizer.vocab_size))
        for n, (w, b) in enumerate(heads, start=1):
            params[f"ntp.{n}.weight"], params[f"ntp.{n}.bias"] = w, b
    else:
        params["mlm.weight"], params["mlm.bias"] = init_head(head_rng, encoder_cfg.model_dim,
                                                             quantizer.vocab_size)
    mean, std = input_normalizer(quantizer)
    return TrainState(
        train_cfg, encoder_cfg, params,
        Adam(train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps),
        quantizer, mean, std, root.fork("data"), root.fork("mask"),
    )
