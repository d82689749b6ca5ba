"""Checkpoint directories.

Layout::

    manifest.json             configs, causality, step, rng states, digests,
                              and an ordered tensor table
    params/<name>.bin         one little-endian blob per named parameter
    adam_m/<name>.bin         first Adam moment (absent before the first update)
    adam_v/<name>.bin         second Adam moment
    quantizer/<name>.bin      frozen projection / codebook / standardiser
    buffers/<name>.bin        encoder-input normaliser

Blobs default to float64 so that a resumed run continues bit-exactly;
``dtype="float32"`` gives half-size export copies. Writing is
deterministic (sorted JSON keys, no timestamps), so save -> load -> save
reproduces every byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..encoder import EncoderConfig
from ..errors import InputError
from ..numcore import Rng, Tensor
from ..quantizer import RandomProjectionQuantizer
from ..serialization import array_from_bytes, array_to_bytes, canonical_json
from .optim import Adam
from .state import TrainConfig, TrainState

FORMAT = "nestrq-checkpoint/1"


def _tensor_table(state: TrainState):
    for name, p in state.params.items():
        yield "params", name, p.data
    for name in state.params:
        if name in state.optimizer.m:
            yield "adam_m", name, state.optimizer.m[name]
            yield "adam_v", name, state.optimizer.v[name]
    q = state.quantizer
    for name in ("projection", "codebook", "mean", "std"):
        yield "quantizer", name, getattr(q, name)
    yield "buffers", "input_mean", state.input_mean
    yield "buffers", "input_std", state.input_std


def save_checkpoint(state: TrainState, path, dtype: str = "float64") -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    table = []
    for group, name, arr in _tensor_table(state):
        raw = array_to_bytes(arr, dtype)
        rel = f"{group}/{name}.bin"
        (root / group).mkdir(exist_ok=True)
        (root / rel).write_bytes(raw)
        table.append({
            "group": group, "name": name, "shape": list(np.shape(arr)), "dtype": dtype,
            "file": rel, "sha256": hashlib.sha256(raw).hexdigest(),
        })
    q = state.quantizer
    manifest = {
        "format": FORMAT,
        "step": state.step,
        "seed": state.train_cfg.seed,
        "config_digest": state.config_digest(),
        "train_config": state.train_cfg.to_json(),
        "encoder_config": state.encoder_cfg.to_json(),
        "causality": state.encoder_cfg.causality.to_json(),
        "optimizer": {
            "t": state.optimizer.t, "beta1": state.optimizer.beta1,
            "beta2": state.optimizer.beta2, "eps": state.optimizer.eps,
        },
        "rng": {"data": state.data_rng.get_state(), "mask": state.mask_rng.get_state()},
        "quantizer": {"seed": q.seed, "stack": q.stack, "V": q.vocab_size, "dim": q.dim,
                      "fingerprint": q.fingerprint()},
        "meta": state.meta,
        "tensors": table,
    }
    (root / "manifest.json").write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    return root


def read_manifest(path) -> dict:
    return json.loads((Path(path) / "manifest.json").read_text(encoding="utf-8"))


def load_checkpoint(path) -> TrainState:
    root = Path(path)
    manifest = read_manifest(root)
    if manifest.get("format") != FORMAT:
        raise InputError(f"{root}: not a {FORMAT} directory")
    groups: dict[str, dict[str, np.ndarray]] = {}
    for entry in manifest["tensors"]:
        raw = (root / entry["file"]).read_bytes()
        if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise InputError(f"{root / entry['file']}: checksum mismatch")
        groups.setdefault(entry["group"], {})[entry["name"]] = array_from_bytes(raw, entry["shape"], entry["dtype"])

    qa = groups["quantizer"]
    for a in qa.values():
        a.setflags(write=False)
    qm = manifest["quantizer"]
    quantizer = RandomProjectionQuantizer(qa["projection"], qa["codebook"], qa["mean"], qa["std"],
                                          qm["stack"], qm["seed"])
    opt_meta = manifest["optimizer"]
    opt = Adam(opt_meta["beta1"], opt_meta["beta2"], opt_meta["eps"])
    opt.t = opt_meta["t"]
    opt.m = dict(groups.get("adam_m", {}))
    opt.v = dict(groups.get("adam_v", {}))
    params = {name: Tensor(a.copy(), True) for name, a in groups["params"].items()}
    return TrainState(
        train_cfg=TrainConfig.from_json(manifest["train_config"]),
        encoder_cfg=EncoderConfig.from_json(manifest["encoder_config"]),
        params=params,
        optimizer=opt,
        quantizer=quantizer,
        input_mean=groups["buffers"]["input_mean"],
        input_std=groups["buffers"]["input_std"],
        data_rng=Rng.from_state(manifest["rng"]["data"]),
        mask_rng=Rng.from_state(manifest["rng"]["mask"]),
        step=manifest["step"],
        meta=manifest.get("meta", {}),
    )
