"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .rng import Rng
from .tensor import Tensor, backward, no_grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dominating."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    num_coords: int = 100,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` recomputes a scalar loss from ``inputs`` (leaf tensors with
    ``requires_grad``). Coordinates are sampled uniformly across all inputs;
    if fewer than ``num_coords`` exist, every coordinate is checked.
    """
    for t in inputs:
        t.grad = None
    backward(fn())
    sizes = [t.size for t in inputs]
    total = int(np.sum(sizes))
    if total <= num_coords:
        picks = np.arange(total)
    else:
        picks = np.sort(Rng(seed).fork("gradcheck").choice(total, size=num_coords, replace=False))
    offsets = np.cumsum([0] + sizes)

    worst = 0.0
    with no_grad():
        for flat in picks:
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            t = inputs[i]
            j = int(flat - offsets[i])
            view = t.data.reshape(-1)
            orig = view[j]
            view[j] = orig + h
            fp = fn().item()
            view[j] = orig - h
            fm = fn().item()
            view[j] = orig
            numeric = (fp - fm) / (2 * h)
            analytic = t.grad.reshape(-1)[j]
            worst = max(worst, float(relative_error(analytic, numeric)))
    return worst
