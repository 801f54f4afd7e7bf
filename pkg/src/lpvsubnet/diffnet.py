"""Minimal reverse-mode differentiation engine and MLP stack.

Values are float64 numpy arrays. Time-series quantities carry a leading
batch axis ``(B, d)``; the only broadcasting supported is a row vector
``(d,)`` added to a batch ``(B, d)``.
"""
from contextlib import contextmanager

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Evaluate without recording the graph (validation, simulation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """A value in the computation graph.

    ``vjp`` maps the output cotangent to a tuple of cotangents, one per
    parent (``None`` for parents that do not require a gradient).
    """

    __slots__ = ("value", "grad", "parents", "vjp", "op", "requires_grad", "name")

    def __init__(self, value, op="const", parents=(), vjp=None, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape}, name={self.name!r})"


def parameter(value, name=None):
    """A trainable leaf."""
    return Node(np.array(value, dtype=np.float64), op="param", requires_grad=True, name=name)


def constant(value):
    return Node(np.asarray(value, dtype=np.float64))


def as_node(x):
    return x if isinstance(x, Node) else constant(x)


def _make(value, op, parents, vjp):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Node(value, op, parents, vjp, True)
    return Node(value, op)


# -- elementary ops ----------------------------------------------------------

def _broadcast_pair(a, b, op):
    sa, sb = a.value.shape, b.value.shape
    if sa == sb:
        return None
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return "b"
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return "a"
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g, which, side):
    return g.sum(axis=0) if which == side else g


def add(a, b):
    a, b = as_node(a), as_node(b)
    bc = _broadcast_pair(a, b, "add")

    def vjp(g):
        return (
            _unbroadcast(g, bc, "a") if a.requires_grad else None,
            _unbroadcast(g, bc, "b") if b.requires_grad else None,
        )

    return _make(a.value + b.value, "add", (a, b), vjp)


def sub(a, b):
    a, b = as_node(a), as_node(b)
    bc = _broadcast_pair(a, b, "sub")

    def vjp(g):
        return (
            _unbroadcast(g, bc, "a") if a.requires_grad else None,
            -_unbroadcast(g, bc, "b") if b.requires_grad else None,
        )

    return _make(a.value - b.value, "sub", (a, b), vjp)


def scale(a, c):
    a = as_node(a)
    c = float(c)
    return _make(c * a.value, "scale", (a,), lambda g: (c * g,))


def matvec(W, x):
    """``W @ x`` for a single vector, ``x @ W.T`` for a batch of rows."""
    W, x = as_node(W), as_node(x)
    if W.value.ndim != 2 or x.value.ndim not in (1, 2) or x.value.shape[-1] != W.value.shape[1]:
        raise DimensionError(f"matvec: W{W.value.shape} cannot act on x{x.value.shape}")
    Wv, xv = W.value, x.value
    if xv.ndim == 1:
        out = Wv @ xv

        def vjp(g):
            return (
                np.outer(g, xv) if W.requires_grad else None,
                g @ Wv if x.requires_grad else None,
            )
    else:
        out = xv @ Wv.T

        def vjp(g):
            return (
                g.T @ xv if W.requires_grad else None,
                g @ Wv if x.requires_grad else None,
            )

    return _make(out, "matvec", (W, x), vjp)


def matmul(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(f"matmul: {a.value.shape} @ {b.value.shape}")
    av, bv = a.value, b.value

    def vjp(g):
        return (
            g @ bv.T if a.requires_grad else None,
            av.T @ g if b.requires_grad else None,
        )

    return _make(av @ bv, "matmul", (a, b), vjp)


def tanh(a):
    a = as_node(a)
    out = np.tanh(a.value)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def square(a):
    a = as_node(a)
    av = a.value
    return _make(av * av, "square", (a,), lambda g: (2.0 * av * g,))


def sum(a):  # noqa: A001 - mirrors the op name
    a = as_node(a)
    shape = a.value.shape
    return _make(np.asarray(a.value.sum()), "sum", (a,), lambda g: (np.full(shape, float(g)),))


def concat(nodes, axis=-1):
    nodes = [as_node(n) for n in nodes]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    splits = np.cumsum([n.value.shape[axis] for n in nodes])[:-1]

    def vjp(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(p if n.requires_grad else None for p, n in zip(parts, nodes))

    return _make(out, "concat", tuple(nodes), vjp)


def rows(a, start, stop):
    """Rows ``start:stop`` of a batch."""
    a = as_node(a)
    shape = a.value.shape

    def vjp(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _make(a.value[start:stop], "rows", (a,), vjp)


def affine_matvec(M, p, x):
    """``(M[0] + sum_i p_i M[i]) @ x`` per batch row.

    ``M`` has shape ``(1 + n_p, R, C)``, ``p`` is ``(B, n_p)`` (or ``None``
    when ``n_p = 0``), ``x`` is ``(B, C)``.
    """
    M, x = as_node(M), as_node(x)
    Mv, xv = M.value, x.value
    B = xv.shape[0]
    n_p = Mv.shape[0] - 1
    if xv.ndim != 2 or xv.shape[1] != Mv.shape[2]:
        raise DimensionError(f"affine_matvec: M{Mv.shape} cannot act on x{xv.shape}")
    if p is None:
        if n_p:
            raise DimensionError(f"affine_matvec: {n_p} scheduling channels expected, got none")
        pe = np.ones((B, 1))
        parents = (M, x)
    else:
        p = as_node(p)
        if p.value.shape != (B, n_p):
            raise DimensionError(f"affine_matvec: scheduling shape {p.value.shape}, expected {(B, n_p)}")
        pe = np.concatenate([np.ones((B, 1)), p.value], axis=1)
        parents = (M, x, p)
    out, Mx = kernels.affine_matvec_forward(Mv, pe, xv)

    def vjp(g):
        need_p = len(parents) == 3 and parents[2].requires_grad
        dM, dx, dp = kernels.affine_matvec_backward(Mv, pe, xv, Mx, g, need_p)
        grads = (dM if M.requires_grad else None, dx if x.requires_grad else None)
        return grads + (dp,) if len(parents) == 3 else grads

    return _make(out, "affine_matvec", parents, vjp)


_OPS = {
    "add": add,
    "sub": sub,
    "scale": scale,
    "matvec": matvec,
    "matmul": matmul,
    "tanh": tanh,
    "square": square,
    "sum": sum,
    "concat": lambda *nodes: concat(nodes),
}


def graph_apply(op_kind, inputs, *args):
    """Apply a named op to a list of input nodes (extra args e.g. the scale factor)."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op {op_kind!r}") from None
    return fn(*inputs, *args)


# -- backward ----------------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root, seed=1.0):
    """Accumulate ``d root / d leaf`` into every reachable leaf's ``grad``.

    Returns a dict mapping leaf nodes to their gradient contributions in
    deterministic (topological) order.
    """
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.value.shape}")
    if not root.requires_grad:
        return {}
    cot = {id(root): np.full(root.value.shape, float(seed))}
    leaves = {}
    for node in reversed(_topo_order(root)):
        g = cot.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)
            node.grad += g
            leaves[node] = leaves[node] + g if node in leaves else g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in cot:
                cot[key] = cot[key] + pg
            else:
                cot[key] = pg
    return leaves


# -- MLP ---------------------------------------------------------------------

class Mlp:
    """Fully connected tanh network with linear output layer and optional linear bypass.

    Args:
        widths: ``[d_in, h_1, ..., h_q, d_out]``.
        bypass: add a trainable linear map ``d_in -> d_out`` around the stack.
        seed: seed for Glorot-uniform weight initialization (biases and bypass start at zero).
    """

    def __init__(self, widths, bypass=False, seed=0, name="mlp"):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"MLP widths must be >= 2 positive integers, got {widths}")
        self.widths = widths
        self.name = name
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(parameter(rng.uniform(-lim, lim, (fan_out, fan_in)), f"{name}.W{i}"))
            self.biases.append(parameter(np.zeros(fan_out), f"{name}.b{i}"))
        self.bypass = parameter(np.zeros((widths[-1], widths[0])), f"{name}.bypass") if bypass else None

    @property
    def d_in(self):
        return self.widths[0]

    @property
    def d_out(self):
        return self.widths[-1]

    def parameters(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        if self.bypass is not None:
            out.append(self.bypass)
        return out

    def __call__(self, z0):
        return mlp_forward(self, z0)


def mlp_init(widths, bypass=False, seed=0, name="mlp"):
    return Mlp(widths, bypass=bypass, seed=seed, name=name)


def mlp_forward(net, z0):
    """Evaluate the network on a vector ``(d_in,)`` or a batch ``(B, d_in)`` as one fused node."""
    z0 = as_node(z0)
    x = z0.value
    if x.shape[-1] != net.d_in or x.ndim not in (1, 2):
        raise DimensionError(f"{net.name}: expected input dim {net.d_in}, got shape {x.shape}")
    single = x.ndim == 1
    xb = x[None, :] if single else x
    Ws = [W.value for W in net.weights]
    bs = [b.value for b in net.biases]
    zs = [xb]
    for W, b in zip(Ws[:-1], bs[:-1]):
        zs.append(np.tanh(zs[-1] @ W.T + b))
    out = zs[-1] @ Ws[-1].T + bs[-1]
    if net.bypass is not None:
        out = out + xb @ net.bypass.value.T
    params = net.parameters()
    parents = (z0, *params)

    def vjp(g):
        gb = g[None, :] if single else g
        dWs, dbs = [None] * len(Ws), [None] * len(Ws)
        dWs[-1] = gb.T @ zs[-1]
        dbs[-1] = gb.sum(axis=0)
        dz = gb @ Ws[-1]
        for i in range(len(Ws) - 2, -1, -1):
            da = dz * (1.0 - zs[i + 1] ** 2)
            dWs[i] = da.T @ zs[i]
            dbs[i] = da.sum(axis=0)
            dz = da @ Ws[i]
        grads = []
        for dW, db in zip(dWs, dbs):
            grads += [dW, db]
        if net.bypass is not None:
            grads.append(gb.T @ xb)
            dz = dz + gb @ net.bypass.value
        dx = (dz[0] if single else dz) if z0.requires_grad else None
        return (dx, *grads)

    return _make(out[0] if single else out, "mlp", parents, vjp)
