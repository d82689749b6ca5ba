"""Pre-training loop, schedules, checkpoints and the linear probe."""

from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .loop import Batch, MetricsRecord, PretrainData, make_batch, metrics_from_file, pretrain, train_step
from .optim import Adam, clip_by_global_norm, global_norm
from .probe import ProbeResult, adapt_and_probe, adapt_state, encoder_states, linear_probe, pool_labels
from .schedule import linear_lr, lr_at, transformer_lr
from .state import TrainConfig, TrainState, init_train_state, input_normalizer

__all__ = [
    "Adam", "Batch", "MetricsRecord", "PretrainData", "ProbeResult", "TrainConfig", "TrainState",
    "adapt_and_probe", "adapt_state", "clip_by_global_norm", "encoder_states", "global_norm",
    "init_train_state", "input_normalizer", "linear_lr", "linear_probe", "load_checkpoint",
    "lr_at", "make_batch", "metrics_from_file", "pool_labels", "pretrain", "read_manifest",
    "save_checkpoint", "train_step", "transformer_lr",
]
