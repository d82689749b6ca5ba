"""Conformer encoder with switchable attention/convolution causality.

Layout: a 4x subsampler (two stride-2 kernel-3 convolutions with swish,
then a linear projection), absolute sinusoidal positions, and a stack of
conformer blocks ``FF/2 -> masked MHSA -> depthwise conv module -> FF/2
-> LayerNorm``.

The subsampler is group-causal in every configuration: subsampled
position ``l`` reads input frames ``< 4(l + 1)`` only, i.e. its own four
frames and earlier ones, the same frames the quantizer stacks into token
``k_l``. Attention causality comes from the mask alone, convolution
causality from the depthwise kernel length and its padding.

Depthwise kernels are stored past-to-future: tap ``i`` of a ``2m+1``
kernel multiplies frame ``t - m + i``. A causal ``m+1`` kernel keeps taps
``0..m`` (offsets ``-m..0``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Literal

import numpy as np

from .errors import ConfigError, InputError
from .features import FeatureSequence
from .numcore import (
    PaddingSpec,
    Rng,
    Tensor,
    as_tensor,
    conv1d,
    conv1d_depthwise,
    glu,
    layer_norm,
    linear,
    masked_softmax,
    matmul,
    swap_last,
    swish,
)

AttentionMode = Literal["NC-A", "C-A", "C-A-lookahead"]
ConvMode = Literal["NC-C", "C-C"]

SUBSAMPLE_FACTOR = 4
DEFAULT_LOOKAHEAD_BLOCKS = 3

Params = Dict[str, Tensor]


@dataclass(frozen=True)
class CausalitySpec:
    """Attention mode, convolution mode, lookahead block count M and conv half-width m."""

    attention_mode: AttentionMode = "C-A"
    conv_mode: ConvMode = "C-C"
    lookahead_blocks: int = 0
    conv_half_width: int = 3

    def __post_init__(self):
        if self.attention_mode not in ("NC-A", "C-A", "C-A-lookahead"):
            raise ConfigError(f"unknown attention mode {self.attention_mode!r}")
        if self.conv_mode not in ("NC-C", "C-C"):
            raise ConfigError(f"unknown conv mode {self.conv_mode!r}")
        if self.lookahead_blocks < 0:
            raise ConfigError("lookahead_blocks must be >= 0")
        if self.lookahead_blocks > 0 and self.attention_mode != "C-A-lookahead":
            raise ConfigError("lookahead_blocks > 0 requires attention_mode 'C-A-lookahead'")
        if self.conv_half_width < 0:
            raise ConfigError("conv_half_width must be >= 0")

    @classmethod
    def causal(cls, m: int = 3) -> "CausalitySpec":
        return cls("C-A", "C-C", 0, m)

    @classmethod
    def noncausal(cls, m: int = 3) -> "CausalitySpec":
        return cls("NC-A", "NC-C", 0, m)

    @classmethod
    def streaming(cls, lookahead_blocks: int = DEFAULT_LOOKAHEAD_BLOCKS, m: int = 3) -> "CausalitySpec":
        return cls("C-A-lookahead", "C-C", lookahead_blocks, m)

    @property
    def kernel_size(self) -> int:
        m = self.conv_half_width
        return 2 * m + 1 if self.conv_mode == "NC-C" else m + 1

    @property
    def padding(self) -> PaddingSpec:
        m = self.conv_half_width
        return PaddingSpec.symmetric(m) if self.conv_mode == "NC-C" else PaddingSpec.causal(m)

    @property
    def is_fully_causal(self) -> bool:
        return self.conv_mode == "C-C" and self.attention_mode != "NC-A" and self.lookahead_blocks == 0

    def label(self) -> str:
        att = self.attention_mode
        if att == "C-A-lookahead":
            att = f"C-A+{self.lookahead_blocks}"
        return f"{att},{self.conv_mode}"

    def to_json(self) -> dict:
        return {
            "attention_mode": self.attention_mode,
            "conv_mode": self.conv_mode,
            "lookahead_blocks": self.lookahead_blocks,
            "conv_half_width": self.conv_half_width,
        }


@dataclass(frozen=True)
class EncoderConfig:
    num_mels: int = 80
    num_blocks: int = 4
    model_dim: int = 64
    num_heads: int = 4
    ff_expansion: int = 4
    causality: CausalitySpec = field(default_factory=CausalitySpec)
    subsample_factor: int = SUBSAMPLE_FACTOR

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.subsample_factor != SUBSAMPLE_FACTOR:
            raise ConfigError("subsample_factor is fixed at 4")
        if min(self.num_mels, self.num_blocks, self.model_dim, self.ff_expansion) < 1:
            raise ConfigError("encoder sizes must be positive")
        if self.causality.lookahead_blocks > self.num_blocks:
            raise ConfigError(
                f"lookahead_blocks {self.causality.lookahead_blocks} exceeds {self.num_blocks} blocks"
            )

    def to_json(self) -> dict:
        return {
            "num_mels": self.num_mels,
            "num_blocks": self.num_blocks,
            "model_dim": self.model_dim,
            "num_heads": self.num_heads,
            "ff_expansion": self.ff_expansion,
            "subsample_factor": self.subsample_factor,
            "causality": self.causality.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["causality"] = CausalitySpec(**d.get("causality", {}))
        return cls(**d)


@dataclass
class EncoderForwardResult:
    H: Tensor  # subsampler output, [..., L, model_dim]
    O: Tensor  # conformer output, [..., L, model_dim]


# --- parameters ------------------------------------------------------------

def xavier_uniform(rng: Rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def conv_kernel_names(params: Params) -> list[str]:
    return [k for k in params if k.endswith("conv.depthwise")]


def init_encoder_params(cfg: EncoderConfig, rng: Rng) -> Params:
    """Fresh parameters, insertion-ordered (this order is the checkpoint order)."""
    d, f = cfg.model_dim, cfg.num_mels
    hidden = d * cfg.ff_expansion
    p: Params = {}

    def lin(name, n_in, n_out):
        p[f"{name}.weight"] = Tensor(xavier_uniform(rng, (n_in, n_out), n_in, n_out), True)
        p[f"{name}.bias"] = Tensor(np.zeros(n_out), True)

    def norm(name, n):
        p[f"{name}.gain"] = Tensor(np.ones(n), True)
        p[f"{name}.bias"] = Tensor(np.zeros(n), True)

    p["subsample.conv1.weight"] = Tensor(xavier_uniform(rng, (3, f, d), 3 * f, 3 * d), True)
    p["subsample.conv1.bias"] = Tensor(np.zeros(d), True)
    p["subsample.conv2.weight"] = Tensor(xavier_uniform(rng, (3, d, d), 3 * d, 3 * d), True)
    p["subsample.conv2.bias"] = Tensor(np.zeros(d), True)
    lin("subsample.proj", d, d)

    k = cfg.causality.kernel_size
    for b in range(cfg.num_blocks):
        pre = f"blocks.{b}"
        for ff in ("ff1", "ff2"):
            norm(f"{pre}.{ff}.norm", d)
            lin(f"{pre}.{ff}.up", d, hidden)
            lin(f"{pre}.{ff}.down", hidden, d)
        norm(f"{pre}.attn.norm", d)
        for proj in ("q", "k", "v", "out"):
            lin(f"{pre}.attn.{proj}", d, d)
        norm(f"{pre}.conv.norm", d)
        lin(f"{pre}.conv.pointwise1", d, 2 * d)
        p[f"{pre}.conv.depthwise"] = Tensor(xavier_uniform(rng, (k, d), k, k), True)
        norm(f"{pre}.conv.mid_norm", d)
        lin(f"{pre}.conv.pointwise2", d, d)
        norm(f"{pre}.final_norm", d)
    return p


def parameter_checksum(params: Params) -> str:
    from .serialization import digest
    return digest({k: v.data.tobytes().hex() for k, v in params.items()})


# --- forward ---------------------------------------------------------------

def subsample(x, params: Params) -> Tensor:
    """``[..., T, F] -> [..., floor(T/4), model_dim]``; position l sees frames < 4(l+1)."""
    x = as_tensor(x)
    t = x.shape[-2]
    if t < SUBSAMPLE_FACTOR:
        raise InputError(f"need at least {SUBSAMPLE_FACTOR} frames, got {t}")
    usable = (t // SUBSAMPLE_FACTOR) * SUBSAMPLE_FACTOR
    if usable != t:
        x = x[..., :usable, :]
    # left pad 1, no right pad: output j reads frames 2j-1, 2j, 2j+1
    h = swish(conv1d(x, params["subsample.conv1.weight"], params["subsample.conv1.bias"],
                     stride=2, pad_left=1))
    h = swish(conv1d(h, params["subsample.conv2.weight"], params["subsample.conv2.bias"],
                     stride=2, pad_left=1))
    return linear(h, params["subsample.proj.weight"], params["subsample.proj.bias"])


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : dim // 2])
    return pe


def build_attention_mask(length: int, mode: str) -> np.ndarray:
    """Boolean ``[L, L]``; entry (i, j) allows query i to read key j.

    ``"NC-A"`` all true, ``"C-A"`` j <= i, ``"lookahead"`` j <= i + 1.
    """
    if length < 1:
        raise InputError("attention mask needs L >= 1")
    i = np.arange(length)[:, None]
    j = np.arange(length)[None, :]
    if mode == "NC-A":
        return np.ones((length, length), dtype=bool)
    if mode == "C-A":
        return j <= i
    if mode in ("lookahead", "C-A-lookahead"):
        return j <= i + 1
    raise ConfigError(f"unknown mask mode {mode!r}")


def block_masks(cfg: EncoderConfig, length: int) -> list[np.ndarray]:
    """Mask per block: the bottom M blocks get the 1-frame lookahead mask."""
    c = cfg.causality
    if c.attention_mode == "NC-A":
        m = build_attention_mask(length, "NC-A")
        return [m] * cfg.num_blocks
    causal = build_attention_mask(length, "C-A")
    ahead = build_attention_mask(length, "lookahead")
    return [ahead if b < c.lookahead_blocks else causal for b in range(cfg.num_blocks)]


def _ln(x, params, name):
    return layer_norm(x, params[f"{name}.gain"], params[f"{name}.bias"])


def _lin(x, params, name):
    return linear(x, params[f"{name}.weight"], params[f"{name}.bias"])


def feed_forward(x, params: Params, name: str) -> Tensor:
    h = swish(_lin(_ln(x, params, f"{name}.norm"), params, f"{name}.up"))
    return _lin(h, params, f"{name}.down")


def self_attention(x, params: Params, name: str, mask: np.ndarray, num_heads: int) -> Tensor:
    x = _ln(x, params, f"{name}.norm")
    *lead, length, d = x.shape
    dk = d // num_heads

    def heads(t):
        # [..., L, d] -> [..., h, L, dk]
        t = t.reshape(*lead, length, num_heads, dk)
        nd = len(lead)
        return t.transpose(*range(nd), nd + 1, nd, nd + 2)

    q = heads(_lin(x, params, f"{name}.q"))
    k = heads(_lin(x, params, f"{name}.k"))
    v = heads(_lin(x, params, f"{name}.v"))
    scores = matmul(q, swap_last(k)) * (1.0 / np.sqrt(dk))
    ctx = matmul(masked_softmax(scores, mask), v)
    nd = len(lead)
    ctx = ctx.transpose(*range(nd), nd + 1, nd, nd + 2).reshape(*lead, length, d)
    return _lin(ctx, params, f"{name}.out")


def conv_module(x, params: Params, name: str, padding: PaddingSpec) -> Tensor:
    h = glu(_lin(_ln(x, params, f"{name}.norm"), params, f"{name}.pointwise1"))
    h = conv1d_depthwise(h, params[f"{name}.depthwise"], padding)
    h = swish(_ln(h, params, f"{name}.mid_norm"))
    return _lin(h, params, f"{name}.pointwise2")


def conformer_block(x, params: Params, index: int, mask: np.ndarray, causality: CausalitySpec,
                    num_heads: int) -> Tensor:
    pre = f"blocks.{index}"
    kernel = params[f"{pre}.conv.depthwise"]
    if kernel.shape[0] != causality.kernel_size:
        raise ConfigError(
            f"{pre}: depthwise kernel has {kernel.shape[0]} taps but {causality.conv_mode} "
            f"with m={causality.conv_half_width} needs {causality.kernel_size}"
        )
    x = x + 0.5 * feed_forward(x, params, f"{pre}.ff1")
    x = x + self_attention(x, params, f"{pre}.attn", mask, num_heads)
    x = x + conv_module(x, params, f"{pre}.conv", causality.padding)
    x = x + 0.5 * feed_forward(x, params, f"{pre}.ff2")
    return _ln(x, params, f"{pre}.final_norm")


def encode(cfg: EncoderConfig, params: Params, x) -> EncoderForwardResult:
    """Subsample then run every block; ``x`` is ``[T, F]``, ``[B, T, F]`` or a FeatureSequence."""
    if isinstance(x, FeatureSequence):
        x = x.frames
    x = as_tensor(x)
    if x.shape[-1] != cfg.num_mels:
        raise InputError(f"encoder expects {cfg.num_mels} mels, got {x.shape[-1]}")
    h = subsample(x, params)
    length = h.shape[-2]
    o = h + sinusoidal_positions(length, cfg.model_dim)
    for b, mask in enumerate(block_masks(cfg, length)):
        o = conformer_block(o, params, b, mask, cfg.causality, cfg.num_heads)
    return EncoderForwardResult(h, o)


# --- causality adaptation --------------------------------------------------

def truncate_conv_kernels(params: Params) -> Params:
    """NC-C -> C-C: keep taps for offsets -m..0 of every ``2m+1`` kernel, drop the rest."""
    out = dict(params)
    for name in conv_kernel_names(params):
        w = params[name].data
        k = w.shape[0]
        if k % 2 == 0:
            raise ConfigError(f"{name}: even kernel length {k} is not a non-causal 2m+1 kernel")
        m = (k - 1) // 2
        out[name] = Tensor(w[: m + 1].copy(), params[name].requires_grad)
    return out


def expand_conv_kernels(params: Params, rng: Rng) -> Params:
    """C-C -> NC-C: append m Xavier-uniform taps on the future side of each ``m+1`` kernel.

    Fan convention: fan_in = fan_out = 2m+1, so new taps lie in
    ``±sqrt(3 / (2m+1))``. Kernels are visited in parameter order, each
    drawing ``m * channels`` values from ``rng``.
    """
    out = dict(params)
    for name in conv_kernel_names(params):
        w = params[name].data
        m = w.shape[0] - 1
        full = 2 * m + 1
        new = xavier_uniform(rng, (m, w.shape[1]), full, full)
        out[name] = Tensor(np.concatenate([w, new], axis=0), params[name].requires_grad)
    return out


def set_attention_mode(cfg: EncoderConfig, mode: AttentionMode, lookahead_blocks: int = 0) -> EncoderConfig:
    """Change only how masks are built; parameters are untouched."""
    if lookahead_blocks > cfg.num_blocks:
        raise ConfigError(f"lookahead_blocks {lookahead_blocks} exceeds {cfg.num_blocks} blocks")
    causality = replace(cfg.causality, attention_mode=mode, lookahead_blocks=lookahead_blocks)
    return replace(cfg, causality=causality)


def adapt_encoder(cfg: EncoderConfig, params: Params, target: CausalitySpec,
                  rng: Rng | None = None) -> tuple[EncoderConfig, Params]:
    """Move (cfg, params) to ``target`` causality: kernel truncation/expansion plus mask mode."""
    src = cfg.causality
    if target.conv_half_width != src.conv_half_width:
        raise ConfigError("adaptation cannot change the conv half-width m")
    if src.conv_mode == target.conv_mode:
        new_params = dict(params)
    elif src.conv_mode == "NC-C":
        new_params = truncate_conv_kernels(params)
    else:
        if rng is None:
            raise ConfigError("expanding causal kernels needs an rng")
        new_params = expand_conv_kernels(params, rng)
    new_cfg = replace(set_attention_mode(cfg, target.attention_mode, target.lookahead_blocks),
                      causality=target)
    return new_cfg, new_params
