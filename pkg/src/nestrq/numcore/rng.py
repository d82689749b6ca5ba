"""Deterministic random streams.

Pinned generator: numpy's ``Philox`` (4x64, 10 rounds), a counter-based
bit generator whose output stream is fixed for a given key on every
platform. Keys come from ``numpy.random.SeedSequence(seed,
spawn_key=...)``; the spawn key is the CRC-32 of each fork label along the
path from the root, so ``Rng(7).fork("init")`` names one stream forever.

Labels in use: ``"init"`` (parameter init), ``"mask"`` (BEST-RQ masking),
``"data"`` (batch order, crops, synthetic corpus), ``"quantizer"``,
``"probe"``, ``"adapt"``, ``"augment"``.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


class Rng:
    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_label_key(p) for p in self.path))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def fork(self, label: str) -> "Rng":
        """Independent child stream; does not advance this one."""
        return Rng(self.seed, self.path + (str(label),))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"

    # thin pass-throughs
    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self.generator.choice(a, size=size, replace=replace)

    def permutation(self, x):
        return self.generator.permutation(x)

    def uint64(self, size=None):
        return self.generator.integers(0, _MASK64, size=size, dtype=np.uint64, endpoint=True)

    # checkpointing
    def get_state(self) -> dict:
        st = self.generator.bit_generator.state
        return {
            "seed": self.seed,
            "path": list(self.path),
            "counter": [int(v) for v in st["state"]["counter"]],
            "key": [int(v) for v in st["state"]["key"]],
            "buffer": [int(v) for v in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"], tuple(state["path"]))
        rng.generator.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }
        return rng
