"""SpecAugment-style frequency and time masking."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..numcore import Rng
from .fbank import FeatureSequence


def draw_spec_augment_mask(
    shape: tuple[int, int],
    rng: Rng,
    freq_mask_width: int,
    num_freq_masks: int,
    time_mask_width: int,
    num_time_masks: int,
    random_width: bool = True,
) -> np.ndarray:
    """Boolean ``[T, num_mels]`` mask of cells to overwrite.

    Draw order is fixed: for each frequency mask its width (uniform on
    ``[0, F]`` when ``random_width``) then its start, then the same for
    each time mask. With ``random_width=False`` the widths are exactly F/W.
    """
    t_len, n_mels = shape
    if freq_mask_width > n_mels and num_freq_masks:
        raise ConfigError(f"freq mask width {freq_mask_width} exceeds {n_mels} bins")
    if time_mask_width > t_len and num_time_masks:
        raise ConfigError(f"time mask width {time_mask_width} exceeds {t_len} frames")
    mask = np.zeros(shape, dtype=bool)
    for _ in range(num_freq_masks):
        f = int(rng.integers(0, freq_mask_width + 1)) if random_width else freq_mask_width
        f0 = int(rng.integers(0, n_mels - f + 1))
        mask[:, f0:f0 + f] = True
    for _ in range(num_time_masks):
        w = int(rng.integers(0, time_mask_width + 1)) if random_width else time_mask_width
        t0 = int(rng.integers(0, t_len - w + 1))
        mask[t0:t0 + w, :] = True
    return mask


def spec_augment(
    x: FeatureSequence,
    rng: Rng,
    freq_mask_width: int = 27,
    num_freq_masks: int = 2,
    time_mask_width: int = 40,
    num_time_masks: int = 2,
    random_width: bool = True,
) -> FeatureSequence:
    """Overwrite drawn bands/spans with the utterance's mean value."""
    mask = draw_spec_augment_mask(
        x.frames.shape, rng, freq_mask_width, num_freq_masks,
        time_mask_width, num_time_masks, random_width,
    )
    out = x.frames.copy()
    out[mask] = x.frames.mean()
    return FeatureSequence(out, x.utterance_id, x.stride_ms)
