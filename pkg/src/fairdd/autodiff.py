"""Small reverse-mode autodiff over dense float64 numpy arrays.

Every operation returns a :class:`Node` that records its parents and a
closure propagating the upstream gradient to them.  Broadcasting is limited
to adding/multiplying a row vector (shape ``(k,)`` or ``(1, k)``) onto a
matrix with ``k`` columns.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("value", "grad", "parents", "op", "_backward", "requires_grad")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        op: str = "leaf",
        backward: Callable[[np.ndarray], None] | None = None,
        requires_grad: bool = False,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.op = op
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, as_node(other))

    def __radd__(self, other):
        return add(as_node(other), self)

    def __sub__(self, other):
        return add(self, scale(as_node(other), -1.0))

    def __rsub__(self, other):
        return add(as_node(other), scale(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, as_node(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, as_node(other))


def parameter(value) -> Node:
    return Node(np.array(value, dtype=np.float64, copy=True), requires_grad=True)


def constant(value) -> Node:
    return Node(value)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every node reachable from root."""
    if root.value.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None and node.requires_grad:
            node._backward(node.grad)
    for node in order:
        if node.grad is None:
            node.grad = np.zeros_like(node.value)


def grads(root: Node, params: Iterable[Node]) -> list[np.ndarray]:
    """Run backward and return gradients for ``params`` (zeros if disconnected)."""
    params = list(params)
    for p in params:
        p.grad = None
    backward(root)
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]


def _row_broadcast(a: Node, b: Node, opname: str) -> bool:
    """True if ``b`` is broadcast as a row onto ``a``; raises on mismatch."""
    if a.shape == b.shape:
        return False
    if a.value.ndim == 2 and b.value.ndim in (1, 2):
        k = a.shape[1]
        if b.shape in ((k,), (1, k)):
            return True
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0).reshape(shape)


def add(a: Node, b: Node) -> Node:
    _row_broadcast(a, b, "add")
    out = Node(a.value + b.value, (a, b), "add")

    def _bw(g):
        a._accumulate(g)
        b._accumulate(_unbroadcast(g, b.shape))

    out._backward = _bw
    return out


def mul(a: Node, b: Node) -> Node:
    _row_broadcast(a, b, "mul")
    out = Node(a.value * b.value, (a, b), "mul")

    def _bw(g):
        a._accumulate(g * b.value)
        b._accumulate(_unbroadcast(g * a.value, b.shape))

    out._backward = _bw
    return out


def scale(a: Node, c: float) -> Node:
    out = Node(a.value * c, (a,), "scale")
    out._backward = lambda g: a._accumulate(g * c)
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Node(a.value @ b.value, (a, b), "matmul")

    def _bw(g):
        a._accumulate(g @ b.value.T)
        b._accumulate(a.value.T @ g)

    out._backward = _bw
    return out


def transpose(a: Node) -> Node:
    if a.value.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    out = Node(a.value.T.copy(), (a,), "transpose")
    out._backward = lambda g: a._accumulate(g.T)
    return out


def relu(a: Node) -> Node:
    mask = a.value > 0
    out = Node(np.maximum(a.value, 0.0), (a,), "relu")  # NaN propagates
    out._backward = lambda g: a._accumulate(g * mask)
    return out


def exp(a: Node) -> Node:
    v = np.exp(a.value)
    out = Node(v, (a,), "exp")
    out._backward = lambda g: a._accumulate(g * v)
    return out


def log(a: Node) -> Node:
    # clamp keeps 0 * log(0) finite (== 0); no gradient below the floor
    clamped = np.maximum(a.value, LOG_FLOOR)
    live = a.value >= LOG_FLOOR
    out = Node(np.log(clamped), (a,), "log")
    out._backward = lambda g: a._accumulate(np.where(live, g / clamped, 0.0))
    return out


def power(a: Node, p: float) -> Node:
    base = a.value
    out = Node(np.power(base, p), (a,), "power")

    def _bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(base, p - 1.0)
        a._accumulate(np.where(np.isfinite(d), g * d, 0.0))

    out._backward = _bw
    return out


def sum(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:  # noqa: A001
    out = Node(a.value.sum(axis=axis, keepdims=keepdims), (a,), "sum")
    shape = a.shape

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, shape))

    out._backward = _bw
    return out


def mean(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a: Node) -> Node:
    """Softmax over the last axis (max-subtracted)."""
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Node(s, (a,), "softmax")

    def _bw(g):
        a._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    out._backward = _bw
    return out


def l2_normalize(a: Node, eps: float = 1e-12) -> Node:
    norm = np.sqrt((a.value**2).sum(axis=-1, keepdims=True))
    norm = np.maximum(norm, eps)
    y = a.value / norm
    out = Node(y, (a,), "l2_normalize")

    def _bw(g):
        a._accumulate((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm)

    out._backward = _bw
    return out


def concat(nodes: Sequence[Node]) -> Node:
    """Concatenate along the first axis."""
    nodes = list(nodes)
    if not nodes:
        raise ShapeError("concat: no inputs")
    tail = nodes[0].shape[1:]
    for n in nodes[1:]:
        if n.shape[1:] != tail:
            raise ShapeError(f"concat: incompatible shapes {nodes[0].shape} and {n.shape}")
    out = Node(np.concatenate([n.value for n in nodes], axis=0), nodes, "concat")
    sizes = np.cumsum([n.shape[0] for n in nodes])[:-1]

    def _bw(g):
        for n, piece in zip(nodes, np.split(g, sizes, axis=0)):
            n._accumulate(piece)

    out._backward = _bw
    return out


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g
