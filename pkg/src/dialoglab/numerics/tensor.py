"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation creates a :class:`Tensor` that remembers its
parents, a backward closure and a monotonically increasing sequence number.
Sequence numbers give a topological order for free: a node is always created
after its inputs, so sweeping reachable nodes by descending sequence number is
an exact reverse topological traversal.

Recording is thread-local; :func:`no_grad` switches it off for inference.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

from dialoglab.errors import DimensionError, GraphError

DTYPE = np.float64

_seq = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An n-d float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "_released", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._seq = next(_seq)
        self._released = False
        self.name = name

    # construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._seq = next(_seq)
        out._released = False
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # basic properties -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar (implementations live in ops) -----------------------------

    def __add__(self, other):
        from dialoglab.numerics import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from dialoglab.numerics import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from dialoglab.numerics import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from dialoglab.numerics import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from dialoglab.numerics import ops

        return ops.div(self, other)

    def __neg__(self):
        from dialoglab.numerics import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from dialoglab.numerics import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from dialoglab.numerics import ops

        return ops.index(self, index)

    def sum(self, axis=None, keepdims=False):
        from dialoglab.numerics import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from dialoglab.numerics import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    # reverse sweep -------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``requires_grad`` leaf.

        ``self`` must be a scalar unless an explicit seed gradient is given.
        The recorded graph is released afterwards; a second call without a new
        forward pass raises :class:`GraphError`.
        """
        if self._released:
            raise GraphError("backward already ran on this graph; run a new forward pass first")
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor that requires grad")

        nodes = _reachable(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in nodes:
            g = grads.pop(id(node), None)
            if node._backward is None:
                # leaf
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                contributions = node._backward(g)
                for parent, pg in zip(node._parents, contributions):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            node._backward = None
            node._parents = ()
            node._released = True


def _reachable(root: Tensor) -> list[Tensor]:
    seen = {id(root)}
    stack = [root]
    out = []
    while stack:
        node = stack.pop()
        out.append(node)
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    out.sort(key=lambda t: t._seq, reverse=True)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(*shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(*shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)
