"""Tensor type and the reverse-mode differentiation tape."""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_seq = itertools.count()
_state = threading.local()


class DimensionError(ValueError):
    """Operand shapes are incompatible for an operation."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class NumericalError(FloatingPointError):
    """An operation produced NaN or Inf from finite inputs."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


def get_default_dtype():
    return _DEFAULT_DTYPE


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording on the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@dataclass(eq=False)
class Node:
    """One recorded primitive: its inputs and the adjoint rule.

    ``backward`` maps the output adjoint to a tuple of input adjoints (``None``
    for inputs that need no gradient).
    """

    seq: int
    op: str
    parents: tuple
    backward: Callable[[np.ndarray], tuple]


class Tensor:
    """Dense N-d array with an optional gradient and a link to the op that made it."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, _node: Optional[Node] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        # ascontiguousarray would promote 0-d arrays to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node = _node

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar; implementations live in functional -----------------
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

    def __pow__(self, p):
        from . import functional as F
        return F.pow(self, p)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __getitem__(self, idx):
        from . import functional as F
        return F.getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def make_result(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap a primitive's output, checking finiteness and recording on the tape."""
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite values")
    needs_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    node = Node(next(_seq), op, tuple(parents), backward_fn) if needs_grad else None
    return Tensor(data, requires_grad=needs_grad, dtype=data.dtype, _node=node)


class Tape:
    """Ordered record of the primitives that contributed to a tensor.

    Built from the graph reachable from ``root``; ``entries`` are (tensor, node)
    pairs in the order the primitives executed.
    """

    def __init__(self, root: Tensor):
        seen: set[int] = set()
        entries = []
        stack = [root]
        while stack:
            t = stack.pop()
            if t._node is None or id(t._node) in seen:
                continue
            seen.add(id(t._node))
            entries.append((t, t._node))
            stack.extend(p for p in t._node.parents if p.requires_grad)
        entries.sort(key=lambda e: e[1].seq)
        self.root = root
        self.entries = entries

    def __len__(self) -> int:
        return len(self.entries)

    def ops(self) -> list[str]:
        return [node.op for _, node in self.entries]

    def replay(self, seed_grad: np.ndarray, on_visit=None) -> None:
        grads: dict[int, np.ndarray] = {id(self.root): seed_grad}
        for out, node in reversed(self.entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            _accumulate(out, g)
            if on_visit is not None:
                on_visit(node)
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._node is None:
                    _accumulate(parent, pg)
                else:
                    key = id(parent)
                    grads[key] = grads[key] + pg if key in grads else pg


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.dtype)
    if g.shape != t.shape:
        raise DimensionError(f"adjoint shape {g.shape} does not match tensor shape {t.shape}")
    t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that requires grad and feeds ``loss``."""
    if loss.size != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss._node is None:
        if loss.requires_grad:
            _accumulate(loss, seed)
        return
    Tape(loss).replay(seed)
