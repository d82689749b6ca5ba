"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every primitive that touches a tensor with ``requires_grad`` records an
:class:`Op` carrying a global sequence number. :func:`backward` gathers
the ops reachable from the loss into a :class:`Tape` ordered by that
number and replays it in reverse, so gradients flow in exact reverse
recording order. A replayed tape releases its saved buffers; a second
``backward`` over it raises :class:`~nestrq.errors.UsageError`.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ..errors import UsageError

_seq = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable op recording inside the block (evaluation / probing)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Op:
    __slots__ = ("seq", "name", "parents", "out_id", "backward_fn", "consumed")

    def __init__(self, name: str, parents: tuple, backward_fn: Callable):
        self.seq = next(_seq)
        self.name = name
        self.parents = parents
        self.backward_fn = backward_fn
        self.out_id = 0
        self.consumed = False

    def __repr__(self) -> str:
        return f"Op({self.name}, seq={self.seq})"


class Tensor:
    """n-d array of float64 with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_op", "__weakref__")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._op: Op | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent: float):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        from . import ops
        return ops.swap_last(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(name: str, out: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``out`` in a tensor and put an op on the tape when needed.

    ``backward_fn(grad_out)`` returns one gradient (or None) per parent.
    """
    t = Tensor(out)
    if grad_enabled() and any(p.requires_grad for p in parents):
        op = Op(name, tuple(parents), backward_fn)
        op.out_id = id(t)
        t._op = op
        t.requires_grad = True
    return t


class Tape:
    """Ops reachable from one loss, in recording order."""

    def __init__(self, ops: list[Op]):
        self.ops = ops

    def __len__(self) -> int:
        return len(self.ops)

    @classmethod
    def collect(cls, root: Tensor) -> "Tape":
        seen: dict[int, Op] = {}
        stack = [root]
        while stack:
            t = stack.pop()
            op = t._op
            if op is None or id(op) in seen:
                continue
            if op.consumed:
                raise UsageError(
                    f"{op!r} was already consumed by an earlier backward; re-run the forward pass"
                )
            seen[id(op)] = op
            stack.extend(op.parents)
        return cls(sorted(seen.values(), key=lambda o: o.seq))


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    seed = np.ones_like(loss.data)
    if loss._op is None:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return Tape([])

    tape = Tape.collect(loss)
    pending: dict[int, np.ndarray] = {id(loss): seed}
    for op in reversed(tape.ops):
        g = pending.pop(op.out_id, None)
        fn = op.backward_fn
        op.backward_fn = None
        op.consumed = True
        if g is None:
            continue
        grads = fn(g)
        for parent, pg in zip(op.parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                raise AssertionError(f"{op.name}: grad shape {pg.shape} vs {parent.data.shape}")
            if parent._op is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg
    return tape
