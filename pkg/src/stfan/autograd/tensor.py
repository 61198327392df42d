"""Dense tensor with reverse-mode autodiff over a dynamically recorded graph.

Every differentiable op appends a :class:`Node` to the graph when at least one
input requires a gradient.  Nodes carry a global sequence number, so sorting
the ancestors of an output by that number replays execution order; backward
walks it in reverse and visits each node exactly once.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_seq = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, frozen features)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@dataclass(eq=False)
class Node:
    """One recorded operation.

    ``backward`` maps the gradient of ``output`` to a tuple of gradients, one
    per entry of ``inputs`` (``None`` where an input needs no gradient).
    Intermediates needed by backward live in its closure.
    """

    seq: int
    op: str
    inputs: tuple["Tensor", ...]
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    visits: int = field(default=0, repr=False)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def backward(self, grad: np.ndarray | None = None) -> "Graph":
        graph = Graph.from_output(self)
        graph.backward(grad)
        return graph

    # arithmetic is forwarded to ops so the recording logic lives in one place
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

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def sum(self):
        from . import ops

        return ops.sum(self)

    def mean(self):
        from . import ops

        return ops.mean(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    """Wrap ``out_data`` in a tensor and record the producing op if needed."""
    out = Tensor(out_data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(next(_seq), op, tuple(inputs), out, backward)
    return out


class Graph:
    """The recorded ancestry of one output, in execution order."""

    def __init__(self, output: Tensor, nodes: list[Node]):
        self.output = output
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        seen: set[int] = set()
        nodes: list[Node] = []
        stack = [output]
        while stack:
            t = stack.pop()
            node = t.node
            if node is None or id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node.inputs)
        nodes.sort(key=lambda n: n.seq)
        return cls(output, nodes)

    def backward(self, grad: np.ndarray | None = None) -> None:
        out = self.output
        if not out.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if out.size != 1:
                raise ValueError(f"implicit gradient needs a scalar output, got shape {out.shape}")
            grad = np.ones_like(out.data)
        grad = np.asarray(grad, dtype=out.dtype)
        if grad.shape != out.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != output shape {out.shape}")

        pending: dict[int, np.ndarray] = {id(out): grad}
        if out.node is None:
            _accumulate_leaf(out, grad)
            return
        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            node.visits += 1
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.node is None:
                    _accumulate_leaf(t, gi)
                elif id(t) in pending:
                    pending[id(t)] = pending[id(t)] + gi
                else:
                    pending[id(t)] = gi


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.shape:
        raise ValueError(f"gradient shape {g.shape} does not match leaf shape {t.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g
