"""Reverse-mode automatic differentiation over a small closed operator set.

The tape is the graph itself: every operation appends a Node holding its
forward value, its parents, and a vector-Jacobian closure. ``backward``
walks the tape in reverse topological order and accumulates each node's
adjoint exactly once. Values are float64 numpy arrays throughout; scalars
are 0-d arrays.

The operator set is deliberately closed: the handful of primitives below
is everything the editing pipeline needs, and nothing here implements
general broadcasting. Shape mismatches fail loudly instead of bending.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

__all__ = [
    "Node", "leaf", "const", "add", "sub", "mul", "div", "scale",
    "matmul", "tanh", "softmax_rows", "sum_all", "mean_rows", "dot",
    "l2norm", "rowscale", "outer", "transpose", "flatten", "concat",
    "select_row", "backward", "Adam",
]


class Node:
    """One tape entry.

    value          cached forward value (float64 ndarray)
    op             operation tag ("leaf", "const", "add", "matmul", ...)
    parents        input nodes
    vjp            maps the output adjoint to a tuple of parent adjoints
    requires_grad  whether backward should propagate into this node
    grad           filled by backward() for nodes that require grad
    """

    __slots__ = ("value", "op", "parents", "vjp", "requires_grad", "grad")

    def __init__(self, value, op="leaf", parents=(), vjp=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.op = op
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = bool(
            requires_grad or any(p.requires_grad for p in self.parents)
        )
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def leaf(value) -> Node:
    """Trainable input node."""
    return Node(value, op="leaf", requires_grad=True)


def const(value) -> Node:
    """Non-trainable input node; backward never enters it."""
    return Node(value, op="const", requires_grad=False)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _check(cond: bool, op: str, msg: str):
    if not cond:
        raise ValidationError(f"{op}: {msg}")


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check(a.shape == b.shape, "add", f"shape mismatch {a.shape} vs {b.shape}")
    return Node(a.value + b.value, "add", (a, b), lambda g: (g, g))


def scale(a, s: float) -> Node:
    a = _as_node(a)
    s = float(s)
    return Node(a.value * s, "scale", (a,), lambda g: (g * s,))


def sub(a, b) -> Node:
    return add(a, scale(b, -1.0))


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check(a.shape == b.shape, "mul", f"shape mismatch {a.shape} vs {b.shape}")
    return Node(a.value * b.value, "mul", (a, b),
                lambda g: (g * b.value, g * a.value))


def div(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check(a.shape == b.shape, "div", f"shape mismatch {a.shape} vs {b.shape}")
    out = a.value / b.value
    return Node(out, "div", (a, b),
                lambda g: (g / b.value, -g * a.value / (b.value * b.value)))


def matmul(a, b) -> Node:
    """Matrix product for the ndim combinations the pipeline uses:
    (m,n)@(n,k), (n,)@(n,k) and (m,n)@(n,)."""
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value
    ok = (
        (av.ndim == 2 and bv.ndim == 2 and av.shape[1] == bv.shape[0])
        or (av.ndim == 1 and bv.ndim == 2 and av.shape[0] == bv.shape[0])
        or (av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0])
    )
    _check(ok, "matmul", f"incompatible shapes {av.shape} @ {bv.shape}")

    def vjp(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        return np.outer(g, bv), av.T @ g

    return Node(av @ bv, "matmul", (a, b), vjp)


def tanh(a) -> Node:
    a = _as_node(a)
    y = np.tanh(a.value)
    return Node(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def softmax_rows(a) -> Node:
    """Row-wise softmax of a 2-d array, stabilized by max subtraction.

    Backward uses the standard Jacobian-vector contraction
    dx = y * (g - sum(g * y, rows)), applied row by row.
    """
    a = _as_node(a)
    _check(a.value.ndim == 2, "softmax_rows", f"need 2-d input, got {a.shape}")
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - inner),)

    return Node(y, "softmax_rows", (a,), vjp)


def sum_all(a) -> Node:
    a = _as_node(a)
    return Node(np.sum(a.value), "sum", (a,),
                lambda g: (np.broadcast_to(g, a.value.shape).copy(),))


def mean_rows(a) -> Node:
    """Mean over axis 0 of a 2-d array (pooling a stack of row vectors)."""
    a = _as_node(a)
    _check(a.value.ndim == 2, "mean_rows", f"need 2-d input, got {a.shape}")
    n = a.value.shape[0]
    return Node(a.value.mean(axis=0), "mean_rows", (a,),
                lambda g: (np.tile(g / n, (n, 1)),))


def dot(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check(a.value.ndim == 1 and b.value.ndim == 1 and a.shape == b.shape,
           "dot", f"need equal-length 1-d inputs, got {a.shape} and {b.shape}")
    return Node(np.dot(a.value, b.value), "dot", (a, b),
                lambda g: (g * b.value, g * a.value))


def l2norm(a) -> Node:
    """Frobenius norm of an array of any shape.

    The norm is not differentiable at zero; backward pins the subgradient
    there to zero so that an exactly-zero residual stays a fixed point.
    """
    a = _as_node(a)
    n = float(np.sqrt(np.sum(a.value * a.value)))

    def vjp(g):
        if n == 0.0:
            return (np.zeros_like(a.value),)
        return (g * a.value / n,)

    return Node(n, "l2norm", (a,), vjp)


def rowscale(m, v) -> Node:
    """Scale row i of a 2-d array by v[i]. Lifts per-token coefficients."""
    m, v = _as_node(m), _as_node(v)
    _check(m.value.ndim == 2 and v.value.ndim == 1
           and m.value.shape[0] == v.value.shape[0],
           "rowscale", f"need (n,d) and (n,), got {m.shape} and {v.shape}")

    def vjp(g):
        return g * v.value[:, None], (g * m.value).sum(axis=1)

    return Node(m.value * v.value[:, None], "rowscale", (m, v), vjp)


def outer(u, v) -> Node:
    u, v = _as_node(u), _as_node(v)
    _check(u.value.ndim == 1 and v.value.ndim == 1,
           "outer", f"need 1-d inputs, got {u.shape} and {v.shape}")
    return Node(np.outer(u.value, v.value), "outer", (u, v),
                lambda g: (g @ v.value, u.value @ g))


def transpose(a) -> Node:
    a = _as_node(a)
    _check(a.value.ndim == 2, "transpose", f"need 2-d input, got {a.shape}")
    return Node(a.value.T.copy(), "transpose", (a,), lambda g: (g.T,))


def flatten(a) -> Node:
    a = _as_node(a)
    shp = a.value.shape
    return Node(a.value.reshape(-1), "flatten", (a,),
                lambda g: (g.reshape(shp),))


def concat(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check(a.value.ndim == 1 and b.value.ndim == 1,
           "concat", f"need 1-d inputs, got {a.shape} and {b.shape}")
    na = a.value.shape[0]
    return Node(np.concatenate([a.value, b.value]), "concat", (a, b),
                lambda g: (g[:na], g[na:]))


def select_row(a, i: int) -> Node:
    a = _as_node(a)
    _check(a.value.ndim == 2, "select", f"need 2-d input, got {a.shape}")
    _check(0 <= i < a.value.shape[0], "select",
           f"row {i} out of range for {a.shape}")

    def vjp(g):
        out = np.zeros_like(a.value)
        out[i] = g
        return (out,)

    return Node(a.value[i].copy(), "select", (a,), vjp)


def _topo_order(root: Node) -> list:
    """Reverse-postorder DFS. Rejects cycles (possible only through hand
    mutation of .parents, but cheap to detect)."""
    order = []
    state = {}  # id -> 1 while on stack, 2 when done
    stack = [(root, iter(root.parents))]
    state[id(root)] = 1
    while stack:
        node, it = stack[-1]
        advanced = False
        for p in it:
            if not p.requires_grad:
                continue
            s = state.get(id(p))
            if s == 1:
                raise ValidationError("backward: tape contains a cycle")
            if s is None:
                state[id(p)] = 1
                stack.append((p, iter(p.parents)))
                advanced = True
                break
        if not advanced:
            state[id(node)] = 2
            order.append(node)
            stack.pop()
    return order


def backward(loss: Node) -> dict:
    """Accumulate d(loss)/d(node) for every grad-requiring node reachable
    from ``loss``. Returns a dict keyed by leaf Node; also fills .grad.

    The loss must be scalar (0-d). Adjoints are accumulated exactly once
    per node in a deterministic order, so repeated calls over the same
    tape produce bitwise-identical gradients.
    """
    if not isinstance(loss, Node):
        raise ValidationError("backward: loss is not a tape node")
    if loss.value.shape != ():
        raise ValidationError(
            f"backward: loss must be scalar, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return {}

    order = _topo_order(loss)
    adjoint = {id(loss): np.ones(())}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        if node.vjp is None:
            continue
        parent_grads = node.vjp(g)
        for p, pg in zip(node.parents, parent_grads):
            if not p.requires_grad:
                continue
            cur = adjoint.get(id(p))
            adjoint[id(p)] = pg if cur is None else cur + pg

    return {n: n.grad for n in order if n.op == "leaf"}


class Adam(object):
    """Adam with bias correction over a dict of named parameter arrays.

    Parameters are updated in place. A zero gradient leaves a parameter
    bitwise unchanged (first and second moments stay exactly zero).
    """

    def __init__(self, params: dict, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name in self.params:
            g = grads.get(name)
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** self.t)
            v_hat = v / (1.0 - b2 ** self.t)
            self.params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
