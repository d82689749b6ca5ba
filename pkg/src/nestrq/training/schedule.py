from __future__ import annotations

import math

from ..errors import ConfigError


def transformer_lr(step: int, peak_lr: float, warmup_steps: int) -> float:
    """peak * min(step/W, (step/W)^-1/2): linear warm-up, inverse-sqrt decay, equal to peak at W."""
    r = step / warmup_steps
    return peak_lr * min(r, 1.0 / math.sqrt(r))


def linear_lr(step: int, peak_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Ramp 0 -> peak over W steps, then straight down to 0 at ``total_steps``."""
    if step <= warmup_steps:
        return peak_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return 0.0
    return peak_lr * max(0.0, (total_steps - step) / (total_steps - warmup_steps))


def lr_at(step: int, cfg) -> float:
    """Learning rate for 1-based ``step`` under ``cfg.scheduler``."""
    if step < 1:
        raise ConfigError("steps are 1-based")
    if cfg.scheduler == "transformer":
        return transformer_lr(step, cfg.peak_lr, cfg.warmup_steps)
    if cfg.scheduler == "linear":
        return linear_lr(step, cfg.peak_lr, cfg.warmup_steps, cfg.steps)
    raise ConfigError(f"unknown scheduler {cfg.scheduler!r}")
