"""Reverse-mode differentiation on a recording tape.

Operations executed while a :class:`Tape` is active append one record each
(op name, parent node ids, output node id, backward closure).  Records are
appended in execution order, which is a topological order of the graph, so
``Tape.backward`` simply walks the list in reverse.

Outside a tape nothing is recorded: the same code path then runs as plain
numpy inference.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

_node_ids = itertools.count()
_active_tapes: list["Tape"] = []
_debug = False


def set_debug(flag: bool) -> None:
    """Enable the NaN/Inf tripwire that checks every op output."""
    global _debug
    _debug = bool(flag)


@contextmanager
def debug_mode():
    prev = _debug
    set_debug(True)
    try:
        yield
    finally:
        set_debug(prev)


class Tensor:
    """Real-valued array that may carry a gradient."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.node_id = next(_node_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; implementations live in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F
        return F.div(other, self)

    def __neg__(self):
        from . import functional as F
        return F.neg(self)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __getitem__(self, idx):
        from . import functional as F
        return F.getitem(self, idx)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


@dataclass
class OpRecord:
    op: str
    input_ids: tuple
    output_id: int
    backward: Callable = field(repr=False)
    inputs: tuple = field(repr=False, default=())


class SliceGrad:
    """Gradient that is non-zero only on ``index`` of the parent's array.

    Lets ops such as ``unstack`` avoid materializing one dense gradient per
    output slice.
    """

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


class Tape:
    """Records ops in execution order and runs reverse-mode accumulation."""

    def __init__(self):
        self.records: list[OpRecord] = []
        self._closed = False

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def record(self, rec: OpRecord) -> None:
        if self._closed:
            raise RuntimeError("tape already consumed by backward()")
        self.records.append(rec)

    def backward(self, loss: Tensor, retain: bool = False) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not np.all(np.isfinite(loss.data)):
            raise FloatingPointError("loss is not finite")
        if not any(r.output_id == loss.node_id for r in reversed(self.records)):
            raise RuntimeError("loss was not produced on this tape (backward before forward?)")

        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g_out = grads.pop(rec.output_id, None)
            if g_out is None:
                continue
            parent_grads = rec.backward(g_out)
            for parent, g in zip(rec.inputs, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                _accumulate(grads, parent, g)
        # leaves left in the dict never produced records; flush them
        leaves = {}
        for rec in self.records:
            for p in rec.inputs:
                if p.requires_grad:
                    leaves[p.node_id] = p
        for nid, g in grads.items():
            t = leaves.get(nid)
            if t is None:
                continue
            t.grad = g if t.grad is None else t.grad + g
        if not retain:
            self._closed = True
            self.records = []


def _accumulate(grads: dict, parent: Tensor, g) -> None:
    nid = parent.node_id
    if isinstance(g, SliceGrad):
        buf = grads.get(nid)
        if buf is None:
            buf = np.zeros_like(parent.data)
            grads[nid] = buf
        buf[g.index] += g.value
        return
    if g.shape != parent.data.shape:
        raise RuntimeError(f"gradient shape {g.shape} != value shape {parent.data.shape}")
    prev = grads.get(nid)
    grads[nid] = g if prev is None else prev + g


def is_recording() -> bool:
    return bool(_active_tapes)


def make_op(
    value: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable,
    op: str,
) -> Tensor:
    """Wrap ``value`` as the output of an op and record it on the active tape.

    ``backward(g_out)`` must return one gradient (or None, or a
    :class:`SliceGrad`) per parent.
    """
    needs = is_recording() and any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=needs)
    if _debug and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite output from op {op!r}")
    if needs:
        _active_tapes[-1].record(
            OpRecord(op, tuple(p.node_id for p in parents), out.node_id, backward, tuple(parents))
        )
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
