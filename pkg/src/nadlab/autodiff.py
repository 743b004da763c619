"""Reverse-mode differentiation on numpy arrays.

Every operation returns a new ``Node`` holding a float64 array plus closures
that map an output cotangent to parent cotangents.  The closures are written
in terms of Node operations themselves, so gradients are ordinary graph
nodes and can be differentiated once more (depth-2 nesting, enough for the
mixed second-derivative probes used elsewhere in this package).

Values are immutable once wrapped; all functions here are pure.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Node",
    "as_node",
    "grad",
    "add",
    "sub",
    "mul",
    "matmul",
    "relu",
    "sigmoid",
    "softplus",
    "exp",
    "log",
    "square",
    "nsum",
    "nmean",
    "reshape",
    "transpose",
    "broadcast_to",
    "getitem",
    "wrap_pad2d",
    "patches2d",
    "max_last_axis",
    "stop_gradient",
]


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "parents", "vjps")

    def __init__(self, value, parents=(), vjps=()):
        if isinstance(value, Node):
            raise TypeError("Node value must be an array, not a Node")
        arr = np.asarray(value, dtype=np.float64)
        self.value = arr
        self.parents = parents
        self.vjps = vjps

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(shape={self.value.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _sum_to(g: Node, shape: tuple) -> Node:
    """Reduce a broadcast cotangent back to ``shape``."""
    while g.value.ndim > len(shape):
        g = nsum(g, axis=0)
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.value.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = nsum(g, axis=axes, keepdims=True)
    if g.value.shape != tuple(shape):
        g = reshape(g, shape)
    return g


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value + b.value
    return Node(
        out,
        (a, b),
        (lambda g: _sum_to(g, a.value.shape), lambda g: _sum_to(g, b.value.shape)),
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value - b.value
    return Node(
        out,
        (a, b),
        (
            lambda g: _sum_to(g, a.value.shape),
            lambda g: _sum_to(mul(g, -1.0), b.value.shape),
        ),
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value * b.value
    return Node(
        out,
        (a, b),
        (
            lambda g: _sum_to(mul(g, b), a.value.shape),
            lambda g: _sum_to(mul(g, a), b.value.shape),
        ),
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value / b.value
    return Node(
        out,
        (a, b),
        (
            lambda g: _sum_to(div(g, b), a.value.shape),
            lambda g: _sum_to(mul(mul(g, -1.0), div(a, mul(b, b))), b.value.shape),
        ),
    )


def matmul(a, b) -> Node:
    """Batched matrix product; both operands must be at least 2-D."""
    a, b = as_node(a), as_node(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out = np.matmul(a.value, b.value)

    def vjp_a(g):
        return _sum_to(matmul(g, transpose_last2(b)), a.value.shape)

    def vjp_b(g):
        if b.value.ndim == 2 and g.value.ndim > 2:
            # shared weight matrix: fold every batch dim into one GEMM
            # rather than materializing per-row outer products
            k = a.value.shape[-1]
            o = g.value.shape[-1]
            lead = np.broadcast_shapes(a.value.shape[:-2], g.value.shape[:-2])
            a_full = broadcast_to(a, lead + a.value.shape[-2:])
            return matmul(
                transpose_last2(reshape(a_full, (-1, k))), reshape(g, (-1, o))
            )
        return _sum_to(matmul(transpose_last2(a), g), b.value.shape)

    return Node(out, (a, b), (vjp_a, vjp_b))


def transpose_last2(a: Node) -> Node:
    axes = list(range(a.value.ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return transpose(a, tuple(axes))


def relu(a) -> Node:
    a = as_node(a)

    def vjp(g):
        # subgradient 0 at the kink; mask materialized only on backward
        return mul(g, (a.value > 0).astype(np.float64))

    return Node(np.maximum(a.value, 0.0), (a,), (vjp,))


def sigmoid(a) -> Node:
    a = as_node(a)
    v = a.value
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def vjp(g):
        s = sigmoid(a)
        return mul(g, mul(s, sub(1.0, s)))

    return Node(out, (a,), (vjp,))


def softplus(a) -> Node:
    """log(1 + exp(a)), numerically stable."""
    a = as_node(a)
    v = a.value
    out = np.logaddexp(0.0, v)

    def vjp(g):
        return mul(g, sigmoid(a))

    return Node(out, (a,), (vjp,))


def exp(a) -> Node:
    a = as_node(a)
    out = np.exp(a.value)
    return Node(out, (a,), (lambda g: mul(g, exp(a)),))


def log(a) -> Node:
    a = as_node(a)
    return Node(np.log(a.value), (a,), (lambda g: div(g, a),))


def square(a) -> Node:
    a = as_node(a)
    return Node(a.value * a.value, (a,), (lambda g: mul(g, mul(a, 2.0)),))


def nsum(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return broadcast_to(reshape(g, (1,) * a.value.ndim), a.value.shape)
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % a.value.ndim for ax in axes)
        if not keepdims:
            kshape = tuple(
                1 if i in axes else s for i, s in enumerate(a.value.shape)
            )
            g = reshape(g, kshape)
        return broadcast_to(g, a.value.shape)

    return Node(out, (a,), (vjp,))


def nmean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.value.shape[ax]
    return mul(nsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Node:
    a = as_node(a)
    shape = tuple(shape)
    return Node(
        np.reshape(a.value, shape), (a,), (lambda g: reshape(g, a.value.shape),)
    )


def transpose(a, axes) -> Node:
    a = as_node(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Node(
        np.transpose(a.value, axes), (a,), (lambda g: transpose(g, inv),)
    )


def broadcast_to(a, shape) -> Node:
    a = as_node(a)
    shape = tuple(shape)
    return Node(
        np.broadcast_to(a.value, shape).copy(),
        (a,),
        (lambda g: _sum_to(g, a.value.shape),),
    )


def getitem(a, idx) -> Node:
    """Basic (slice/int/ellipsis) indexing."""
    a = as_node(a)
    out = a.value[idx]

    def vjp(g):
        return scatter(g, idx, a.value.shape)

    return Node(out.copy(), (a,), (vjp,))


def scatter(g, idx, shape) -> Node:
    """Adjoint of basic indexing: place ``g`` into zeros of ``shape``."""
    g = as_node(g)
    buf = np.zeros(shape, dtype=np.float64)
    buf[idx] = g.value

    def vjp(gg):
        return getitem(gg, idx)

    return Node(buf, (g,), (vjp,))


def stop_gradient(a) -> Node:
    a = as_node(a)
    return Node(a.value)


def wrap_pad2d(a, pad: int) -> Node:
    """Circular padding of the last two axes."""
    a = as_node(a)
    if pad == 0:
        return a
    nd = a.value.ndim
    widths = [(0, 0)] * (nd - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(a.value, widths, mode="wrap")

    def vjp(g):
        return wrap_fold2d(g, pad)

    return Node(out, (a,), (vjp,))


def wrap_fold2d(g, pad: int) -> Node:
    """Adjoint of wrap_pad2d: crop and fold the wrapped margins back."""
    g = as_node(g)
    v = g.value
    h = v.shape[-2] - 2 * pad
    w = v.shape[-1] - 2 * pad
    core = v[..., pad : pad + h, pad : pad + w].copy()
    core[..., :pad, :] += v[..., pad + h :, pad : pad + w]
    core[..., h - pad :, :] += v[..., :pad, pad : pad + w]
    core[..., :, :pad] += v[..., pad : pad + h, pad + w :]
    core[..., :, w - pad :] += v[..., pad : pad + h, :pad]
    core[..., :pad, :pad] += v[..., pad + h :, pad + w :]
    core[..., :pad, w - pad :] += v[..., pad + h :, :pad]
    core[..., h - pad :, :pad] += v[..., :pad, pad + w :]
    core[..., h - pad :, w - pad :] += v[..., :pad, :pad]

    def vjp(gg):
        return wrap_pad2d(gg, pad)

    return Node(core, (g,), (vjp,))


def patches2d(a, k: int) -> Node:
    """im2col: (..., C, H, W) -> (..., Ho*Wo, C*k*k) with stride 1."""
    a = as_node(a)
    v = a.value
    c, h, w = v.shape[-3:]
    ho, wo = h - k + 1, w - k + 1
    win = np.lib.stride_tricks.sliding_window_view(v, (k, k), axis=(-2, -1))
    # (..., C, Ho, Wo, k, k) -> (..., Ho, Wo, C, k, k)
    win = np.moveaxis(win, -5, -3)
    lead = v.shape[:-3]
    out = np.ascontiguousarray(win).reshape(lead + (ho * wo, c * k * k))

    def vjp(g):
        return patches2d_fold(g, (c, h, w), k)

    return Node(out, (a,), (vjp,))


def patches2d_fold(g, chw: tuple, k: int) -> Node:
    """Adjoint of patches2d: scatter-add patches back to (..., C, H, W)."""
    g = as_node(g)
    c, h, w = chw
    ho, wo = h - k + 1, w - k + 1
    lead = g.value.shape[:-2]
    gv = g.value.reshape(lead + (ho, wo, c, k, k))
    out = np.zeros(lead + (c, h, w), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out[..., :, i : i + ho, j : j + wo] += np.moveaxis(
                gv[..., i, j], -1, -3
            )

    def vjp(gg):
        return patches2d(gg, k)

    return Node(out, (g,), (vjp,))


def max_last_axis(a) -> Node:
    """Max over the last axis; ties resolved to the lowest index."""
    a = as_node(a)
    v = a.value
    idx = np.argmax(v, axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        onehot = np.zeros_like(v)
        np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
        return mul(reshape(g, g.value.shape + (1,)), onehot)

    return Node(out, (a,), (vjp,))


def grad(output: Node, inputs, create_graph: bool = True):
    """Cotangents of a scalar-summed ``output`` w.r.t. each node in ``inputs``.

    The seed cotangent is all-ones, i.e. this differentiates
    ``sum(output)``; reduce first if another weighting is wanted.  Returns
    Nodes, so the results can be differentiated again.
    """
    inputs = list(inputs)
    input_set = set(id(x) for x in inputs)

    # nodes that can reach an input (only these need cotangents)
    reaches = {}

    def compute_reaches(root):
        stack = [(root, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                reaches[id(node)] = id(node) in input_set or any(
                    reaches.get(id(p), False) for p in node.parents
                )
                continue
            if id(node) in reaches:
                continue
            reaches[id(node)] = False  # placeholder to mark visited
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in reaches:
                    stack.append((p, False))

    compute_reaches(output)

    # topological order over the relevant subgraph
    topo = []
    seen = set()
    stack = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not reaches.get(id(node), False):
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and reaches.get(id(p), False):
                stack.append((p, False))

    adjoint = {id(output): Node(np.ones_like(output.value))}
    for node in reversed(topo):
        g = adjoint.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not reaches.get(id(parent), False):
                continue
            contrib = vjp(g)
            prev = adjoint.get(id(parent))
            adjoint[id(parent)] = contrib if prev is None else add(prev, contrib)

    results = []
    for x in inputs:
        g = adjoint.get(id(x))
        if g is None:
            g = Node(np.zeros_like(x.value))
        elif g.value.shape != x.value.shape:
            g = _sum_to(g, x.value.shape)
        if not create_graph:
            g = Node(g.value)
        results.append(g)
    return results
