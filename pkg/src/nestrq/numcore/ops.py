"""Differentiable primitives.

All ops broadcast over leading (batch) axes and act on the trailing
ones, so ``[B, L, D]`` activations flow through the same code as the
``[L, D]`` single-utterance case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import ConfigError, DomainError, ShapeError
from .tensor import Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return record("div", out, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record("power", x ** exponent, (a,),
                  lambda g: (g * exponent * x ** (exponent - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record("log", np.log(x), (a,), lambda g: (g / x,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return record("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def swish(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    x = a.data
    s = _sigmoid(x)
    return record("swish", x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),))


def glu(a) -> Tensor:
    """Gated linear unit over the last axis: first half * sigmoid(second half)."""
    a = as_tensor(a)
    c = a.shape[-1]
    if c % 2:
        raise ShapeError(f"glu needs an even last dimension, got {c}")
    x1, x2 = a.data[..., : c // 2], a.data[..., c // 2:]
    s = _sigmoid(x2)

    def bw(g):
        return (np.concatenate([g * s, g * x1 * s * (1.0 - s)], axis=-1),)

    return record("glu", x1 * s, (a,), bw)


# --- shape -----------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    return record("swap_last", np.swapaxes(a.data, -1, -2), (a,),
                  lambda g: (np.swapaxes(g, -1, -2),))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic(index)

    def bw(g):
        full = np.zeros(shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return record("getitem", a.data[index], (a,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return record("concat", np.concatenate([t.data for t in ts], axis=axis), tuple(ts),
                  lambda g: tuple(np.split(g, cuts, axis=axis)))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return div(sum(a, axis=axis, keepdims=keepdims), float(n))


# --- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting the rest."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-d")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            # shared weight: fold batch axes into rows instead of a batched product + reduction
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return _unbroadcast(ga, ad.shape), gb

    return record("matmul", ad @ bd, (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias); weight is [in, out]."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# --- normalisation / probabilities ----------------------------------------

def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    y = _softmax(a.data)
    return record("softmax", y, (a,),
                  lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def masked_softmax(a, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to ``mask`` (True = allowed).

    Disallowed entries get probability exactly 0. Every row needs at least
    one allowed entry.
    """
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise DomainError("masked_softmax: a row has no allowed entries")
    z = np.where(mask, a.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)
    return record("masked_softmax", y, (a,),
                  lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return record("log_softmax", out, (a,),
                  lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gain.data

    def bw(g):
        dxhat = g * gd
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (dx, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, bias.data.shape))

    return record("layer_norm", xhat * gd + bias.data, (a, gain, bias), bw)


def cross_entropy(logits, targets, reduction: str = "mean") -> Tensor:
    """Mean (or sum) of -log softmax(logits)[target] over all leading positions.

    ``logits`` is ``[..., V]``; ``targets`` is an integer array of the
    leading shape. An empty target set raises :class:`DomainError`.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    v = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    count = targets.size
    if count == 0:
        raise DomainError("cross_entropy over an empty target set")
    if targets.min() < 0 or targets.max() >= v:
        raise DomainError(f"target id out of range [0, {v})")
    x = logits.data.reshape(-1, v)
    t = targets.reshape(-1)
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    rows = np.arange(count)
    nll = (np.log(s) + m)[:, 0] - x[rows, t]
    total = nll.sum()
    scale = 1.0 if reduction == "sum" else 1.0 / count
    if reduction not in ("sum", "mean"):
        raise ConfigError(f"unknown reduction {reduction!r}")
    out = total if reduction == "sum" else total / count

    def bw(g):
        d = e / s
        d[rows, t] -= 1.0
        return ((d * (g * scale)).reshape(logits.shape),)

    return record("cross_entropy", np.asarray(out), (logits,), bw)


# --- convolutions ----------------------------------------------------------

@dataclass(frozen=True)
class PaddingSpec:
    """Zero padding for a depthwise kernel: ``left`` past taps, ``right`` future taps."""

    left: int
    right: int

    @classmethod
    def symmetric(cls, m: int) -> "PaddingSpec":
        return cls(m, m)

    @classmethod
    def causal(cls, m: int) -> "PaddingSpec":
        return cls(m, 0)

    @property
    def kernel_size(self) -> int:
        return self.left + self.right + 1

    @property
    def is_causal(self) -> bool:
        return self.right == 0

    def check(self, kernel_size: int) -> None:
        if kernel_size < 1:
            raise ConfigError("kernel size must be >= 1")
        if self.left < 0 or self.right < 0:
            raise ConfigError("padding must be non-negative")
        if self.right not in (0, self.left):
            raise ConfigError(f"padding {self} is neither symmetric nor causal")
        if kernel_size != self.kernel_size:
            raise ConfigError(
                f"kernel of {kernel_size} taps is inconsistent with padding "
                f"(left={self.left}, right={self.right}) which needs {self.kernel_size}"
            )


def conv1d_depthwise(x, kernel, padding: PaddingSpec) -> Tensor:
    """Per-channel convolution along the time axis of ``x[..., T, D]``.

    ``kernel[k, d]`` multiplies input frame ``t - padding.left + k``; output
    length equals input length.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    k_len, d = kernel.shape
    padding.check(k_len)
    if x.shape[-1] != d:
        raise ShapeError(f"kernel has {d} channels, input has {x.shape[-1]}")
    t_len = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(padding.left, padding.right), (0, 0)]
    xp = np.pad(x.data, pad)
    w = kernel.data
    out = np.zeros(x.shape)
    for k in range(k_len):
        out += xp[..., k:k + t_len, :] * w[k]

    def bw(g):
        gxp = np.zeros(xp.shape)
        gw = np.empty_like(w)
        lead = tuple(range(g.ndim - 1))
        for k in range(k_len):
            gxp[..., k:k + t_len, :] += g * w[k]
            gw[k] = (g * xp[..., k:k + t_len, :]).sum(axis=lead)
        return gxp[..., padding.left:padding.left + t_len, :], gw

    return record("conv1d_depthwise", out, (x, kernel), bw)


def conv1d(x, weight, bias=None, stride: int = 1, pad_left: int = 0, pad_right: int = 0) -> Tensor:
    """Dense 1-D convolution of ``x[..., T, Cin]`` with ``weight[K, Cin, Cout]``.

    Output frame ``t`` reads padded frames ``stride*t .. stride*t + K - 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    k_len, c_in, _ = weight.shape
    if x.shape[-1] != c_in:
        raise ShapeError(f"conv1d expects {c_in} input channels, got {x.shape[-1]}")
    pad = [(0, 0)] * (x.ndim - 2) + [(pad_left, pad_right), (0, 0)]
    xp = np.pad(x.data, pad)
    tp = xp.shape[-2]
    if tp < k_len:
        raise ShapeError("conv1d input shorter than kernel")
    t_out = (tp - k_len) // stride + 1
    span = stride * (t_out - 1) + 1
    w = weight.data
    out = 0.0
    for k in range(k_len):
        out = out + xp[..., k:k + span:stride, :] @ w[k]
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def bw(g):
        gxp = np.zeros(xp.shape)
        gw = np.empty_like(w)
        lead = g.reshape(-1, g.shape[-1])
        for k in range(k_len):
            xs = xp[..., k:k + span:stride, :]
            gw[k] = xs.reshape(-1, c_in).T @ lead
            gxp[..., k:k + span:stride, :] += g @ w[k].T
        gx = gxp[..., pad_left:tp - pad_right, :]
        grads = [gx, gw]
        if bias is not None:
            grads.append(lead.sum(axis=0).reshape(bias.shape))
        return tuple(grads)

    return record("conv1d", out, parents, bw)
