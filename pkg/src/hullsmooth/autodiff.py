"""A small reverse-mode differentiation engine on float64 numpy arrays.

Graphs are dynamic: every op builds a new ``Node`` holding its value, its
parents and a closure mapping the upstream gradient to parent gradients.
``backward`` walks the graph once in reverse topological order.  Gradients
are *added* to ``Node.grad``, so calling ``backward`` twice without
``zero_grad`` accumulates.

Tensors are at most rank 3 (batch x sequence x feature), except for the
neighbor-mixing weights, which carry an extra neighbor axis.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .lexicon import PAD_ID
from .simplex import masked_softmax_np as masked_softmax


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents: Sequence["Node"] = (), backward_fn: Callable | None = None,
                 requires_grad: bool | None = None, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Node):
    """A trainable leaf."""

    __slots__ = ()

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value) -> Node:
    return Node(value, requires_grad=False)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(value, parents, backward_fn) -> Node:
    out = Node(value, parents)
    if out.requires_grad:
        out.backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Node, b: Node, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), bw)


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(a.value * b.value, (a, b), bw)


def matmul(a, b) -> Node:
    """``a @ b`` where ``b`` is a matrix and ``a`` has any leading batch axes."""
    a, b = _as_node(a), _as_node(b)
    if b.value.ndim != 2 or a.value.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ b.value.T
        gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(a.value @ b.value, (a, b), bw)


def total(x) -> Node:
    """Sum of all entries, as a scalar node."""
    x = _as_node(x)
    return _make(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def relu(x: Node) -> Node:
    pos = x.value > 0
    return _make(np.where(pos, x.value, 0.0), (x,), lambda g: (g * pos,))


def log(x: Node) -> Node:
    return _make(np.log(x.value), (x,), lambda g: (g / x.value,))


def softmax(x: Node) -> Node:
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), bw)


def log_softmax(x: Node) -> Node:
    z = x.value - x.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), bw)


def pick(x: Node, index: np.ndarray) -> Node:
    """``x[b, index[b]]`` for a (B, C) node; returns shape (B,)."""
    index = np.asarray(index, dtype=np.int64)
    if x.value.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"pick: incompatible shapes {x.shape} and {index.shape}")
    rows = np.arange(x.shape[0])

    def bw(g):
        out = np.zeros(x.shape)
        out[rows, index] = g
        return (out,)

    return _make(x.value[rows, index], (x,), bw)


def mean_seq(x: Node, mask: np.ndarray | None = None) -> Node:
    """Average over the sequence axis of a (B, L, D) node, skipping masked positions."""
    if x.value.ndim != 3:
        raise ShapeError(f"mean_seq expects (B, L, D), got {x.shape}")
    B, L, _ = x.shape
    m = np.ones((B, L)) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.shape != (B, L):
        raise ShapeError(f"mean_seq: mask shape {m.shape} does not match {x.shape}")
    denom = np.maximum(m.sum(axis=1), 1.0)[:, None]
    w = (m / denom)[:, :, None]
    return _make((x.value * w).sum(axis=1), (x,), lambda g: (g[:, None, :] * w,))


def max_pool_seq(x: Node, mask: np.ndarray | None = None) -> Node:
    """Max over the sequence axis of a (B, L, D) node; ties go to the earliest position."""
    if x.value.ndim != 3:
        raise ShapeError(f"max_pool_seq expects (B, L, D), got {x.shape}")
    B, L, D = x.shape
    v = x.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (B, L):
            raise ShapeError(f"max_pool_seq: mask shape {mask.shape} does not match {x.shape}")
        # rows with no valid position fall back to position 0
        mask = mask.copy()
        mask[~mask.any(axis=1), 0] = True
        v = np.where(mask[:, :, None], v, -np.inf)
    arg = v.argmax(axis=1)
    bi, di = np.meshgrid(np.arange(B), np.arange(D), indexing="ij")
    out = x.value[bi, arg, di]

    def bw(g):
        gx = np.zeros(x.shape)
        gx[bi, arg, di] = g
        return (gx,)

    return _make(out, (x,), bw)


def conv1d(x: Node, w: Node, b: Node | None = None) -> Node:
    """Same-padded 1-D convolution over the sequence axis.

    ``x`` is (B, L, D), ``w`` is (K, D, H) with odd K, ``b`` is (H,).  Position
    ``l`` of the output sees inputs ``l - K//2 .. l + K//2``; outside positions
    are zero.
    """
    if x.value.ndim != 3 or w.value.ndim != 3 or w.shape[1] != x.shape[2] or w.shape[0] % 2 != 1:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    B, L, D = x.shape
    K, _, H = w.shape
    p = K // 2
    xp = np.pad(x.value, ((0, 0), (p, p), (0, 0)))
    out = np.zeros((B, L, H))
    for t in range(K):
        out += xp[:, t:t + L] @ w.value[t]
    parents = [x, w]
    if b is not None:
        if b.shape != (H,):
            raise ShapeError(f"conv1d: bias shape {b.shape} does not match {H} filters")
        out += b.value
        parents.append(b)

    def bw(g):
        gxp = np.zeros(xp.shape)
        gw = np.zeros(w.shape)
        g2 = g.reshape(-1, H)
        for t in range(K):
            gxp[:, t:t + L] += g @ w.value[t].T
            gw[t] = xp[:, t:t + L].reshape(-1, D).T @ g2
        grads = [gxp[:, p:p + L], gw]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, bw)


def gather(table: Node, ids: np.ndarray) -> Node:
    """Row lookup ``table[ids]``.  The PAD row never receives gradient."""
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        gt = np.zeros(table.shape)
        np.add.at(gt, ids.ravel(), g.reshape(-1, table.shape[1]))
        gt[PAD_ID] = 0.0
        return (gt,)

    return _make(table.value[ids], (table,), bw)


def weighted_mix(eta: Node, table: Node, nbr_ids: np.ndarray, mask: np.ndarray,
                 coordinated: bool = True) -> Node:
    """Convex combination of embedding rows with softmax(eta) weights.

    ``eta``, ``nbr_ids`` and ``mask`` are (B, L, M); ``table`` is (V, D) and the
    output is (B, L, D) with ``out[b, l] = sum_m beta[b, l, m] * table[nbr_ids[b, l, m]]``
    where ``beta = softmax(eta)`` over the unmasked neighbor slots.

    With ``coordinated=False`` the value is unchanged but the whole embedding
    gradient is routed to the center row ``nbr_ids[..., 0]``, as if the point
    were written ``center + (point - center)`` with the offset held constant.
    """
    nbr_ids = np.asarray(nbr_ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if eta.shape != nbr_ids.shape or mask.shape != nbr_ids.shape or eta.value.ndim != 3:
        raise ShapeError(f"weighted_mix: eta {eta.shape}, ids {nbr_ids.shape}, mask {mask.shape} must agree")
    beta = masked_softmax(eta.value, mask)
    rows = table.value[nbr_ids]
    out = np.einsum("blm,blmd->bld", beta, rows)

    def bw(g):
        gbeta = np.einsum("blmd,bld->blm", rows, g)
        geta = beta * (gbeta - (beta * gbeta).sum(axis=-1, keepdims=True))
        gt = np.zeros(table.shape)
        D = table.shape[1]
        if coordinated:
            np.add.at(gt, nbr_ids.ravel(), (beta[..., None] * g[:, :, None, :]).reshape(-1, D))
        else:
            np.add.at(gt, nbr_ids[..., 0].ravel(), g.reshape(-1, D))
        gt[PAD_ID] = 0.0
        return geta, gt

    return _make(out, (eta, table), bw)


def dropout(x: Node, rate: float, rng: np.random.Generator) -> Node:
    """Inverted dropout; the mask is drawn from ``rng`` with the shape of ``x``."""
    if rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.value * keep, (x,), lambda g: (g * keep,))


def cross_entropy(scores: Node, labels: np.ndarray, weights: np.ndarray | None = None) -> Node:
    """``sum_b weights[b] * -log softmax(scores[b])[labels[b]]`` as a scalar node."""
    labels = np.asarray(labels, dtype=np.int64)
    if scores.value.ndim != 2 or labels.shape != (scores.shape[0],):
        raise ShapeError(f"cross_entropy: scores {scores.shape} vs labels {labels.shape}")
    B = scores.shape[0]
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    z = scores.value - scores.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    nll = lse - z[rows, labels]
    p = np.exp(z - lse[:, None])

    def bw(g):
        d = p.copy()
        d[rows, labels] -= 1.0
        return (g * w[:, None] * d,)

    return _make((w * nll).sum(), (scores,), bw)


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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Populate ``.grad`` on every node reachable from the scalar ``loss``."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    upstream: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topo_order(loss)):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            upstream[key] = pg if key not in upstream else upstream[key] + pg


def zero_grad(nodes: Iterable[Node]) -> None:
    for n in nodes:
        n.grad = None
