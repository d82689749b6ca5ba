"""Frozen-encoder linear probe on synthetic state labels, and causality adaptation.

This is the downstream-quality proxy: no ASR and no error rates, only
held-out accuracy of an affine map from encoder states to hidden states.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..encoder import CausalitySpec, adapt_encoder, encode
from ..errors import ConfigError, DomainError
from ..features import FeatureSequence
from ..numcore import Rng, Tensor, backward, cross_entropy, linear, no_grad
from ..serialization import digest
from .optim import Adam
from .state import TrainState


@dataclass
class ProbeResult:
    accuracy: float
    chance: float
    num_test_frames: int
    num_train_frames: int
    train_accuracy: float

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "chance": self.chance,
            "num_test_frames": self.num_test_frames,
            "num_train_frames": self.num_train_frames,
            "train_accuracy": self.train_accuracy,
        }


def pool_labels(labels: np.ndarray, length: int, stack: int = 4) -> np.ndarray:
    """Majority label of each group of ``stack`` frames (lowest label wins ties)."""
    groups = np.asarray(labels[: length * stack]).reshape(length, stack)
    return np.array([np.bincount(g).argmax() for g in groups], dtype=np.int64)


def encoder_states(state: TrainState, features: Sequence[FeatureSequence]) -> list[np.ndarray]:
    """Output states ``O`` for each utterance, full length, no gradient tape."""
    out = []
    with no_grad():
        for f in features:
            out.append(encode(state.encoder_cfg, state.params, state.normalize(f.frames)).O.data)
    return out


def linear_probe(
    state: TrainState,
    features: Sequence[FeatureSequence],
    labels: Sequence[np.ndarray],
    num_classes: int | None = None,
    split: float = 0.8,
    epochs: int = 300,
    lr: float = 0.05,
    seed: int = 0,
    shuffle_labels: bool = False,
) -> ProbeResult:
    """Train an affine map on the first ``split`` fraction of utterances, report accuracy on the rest.

    Training is full-batch Adam on mean cross-entropy for ``epochs`` passes;
    ``epochs=0`` evaluates the randomly initialised map.
    """
    if not 0.0 < split < 1.0:
        raise ConfigError("split must lie strictly between 0 and 1")
    states = encoder_states(state, features)
    pooled = [pool_labels(lab, o.shape[0], state.quantizer.stack) for lab, o in zip(labels, states)]
    all_labels = np.concatenate(pooled)
    k = int(num_classes or all_labels.max() + 1)
    if np.unique(all_labels).size < 2:
        raise DomainError("probe needs at least two classes in the corpus")
    rng = Rng(seed).fork("probe")
    if shuffle_labels:
        perm = rng.permutation(all_labels.size)
        all_labels = all_labels[perm]
        cuts = np.cumsum([len(p) for p in pooled])[:-1]
        pooled = np.split(all_labels, cuts)

    n_train = min(max(1, int(round(split * len(states)))), len(states) - 1)
    x_tr = np.concatenate(states[:n_train])
    y_tr = np.concatenate(pooled[:n_train])
    x_te = np.concatenate(states[n_train:])
    y_te = np.concatenate(pooled[n_train:])
    mu, sd = x_tr.mean(axis=0), x_tr.std(axis=0) + 1e-8
    x_tr, x_te = (x_tr - mu) / sd, (x_te - mu) / sd

    d = x_tr.shape[1]
    limit = np.sqrt(6.0 / (d + k))
    w = Tensor(rng.uniform(-limit, limit, size=(d, k)), True)
    b = Tensor(np.zeros(k), True)
    opt = Adam(0.9, 0.999, 1e-8)
    xt = Tensor(x_tr)
    for _ in range(epochs):
        w.grad = b.grad = None
        backward(cross_entropy(linear(xt, w, b), y_tr))
        new = opt.update({"w": w.data, "b": b.data}, {"w": w.grad, "b": b.grad}, lr)
        w.data, b.data = new["w"], new["b"]

    def acc(x, y):
        return float(((x @ w.data + b.data).argmax(axis=1) == y).mean())

    return ProbeResult(acc(x_te, y_te), 1.0 / k, int(y_te.size), int(y_tr.size), acc(x_tr, y_tr))


def adapt_state(state: TrainState, target: CausalitySpec, seed: int = 0) -> TrainState:
    """Copy of ``state`` moved to ``target`` causality.

    NC-C -> C-C truncates kernels, C-C -> NC-C expands them with taps from
    ``Rng(seed).fork("adapt")``; the attention mode is switched by config
    only. Optimizer moments are dropped since kernel shapes may change.
    """
    src = state.encoder_cfg.causality
    if target.conv_half_width != src.conv_half_width:
        raise ConfigError(
            f"cannot adapt m={src.conv_half_width} kernels to m={target.conv_half_width}"
        )
    enc_cfg, params = adapt_encoder(state.encoder_cfg, state.params, target, Rng(seed).fork("adapt"))
    if src.conv_mode == target.conv_mode:
        transform = "none"
    else:
        transform = "truncate" if src.conv_mode == "NC-C" else "expand"
    meta = copy.deepcopy(state.meta)
    history = meta.setdefault("adaptations", [])
    history.append({
        "from": src.to_json(), "to": target.to_json(), "kernels": transform,
        "seed": seed if transform == "expand" else None,
        "source_digest": digest({k: v.data.tobytes().hex() for k, v in state.params.items()}),
    })
    out = replace(
        state,
        encoder_cfg=enc_cfg,
        params={k: Tensor(v.data.copy(), True) for k, v in params.items()},
        optimizer=type(state.optimizer)(state.optimizer.beta1, state.optimizer.beta2, state.optimizer.eps),
        meta=meta,
    )
    return out


def adapt_and_probe(state: TrainState, target: CausalitySpec, features, labels,
                    adapt_seed: int = 0, **probe_kwargs) -> tuple[ProbeResult, TrainState]:
    adapted = adapt_state(state, target, adapt_seed)
    return linear_probe(adapted, features, labels, **probe_kwargs), adapted
