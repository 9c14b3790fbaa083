"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every :class:`Tensor` holds a float64 array, the parents it was computed
from and a closure that maps the output adjoint to parent adjoints.
:func:`grad` sorts the recorded graph topologically and sweeps it once in
reverse.

Broadcasting follows numpy; adjoints are summed back to the parent shape.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "NonFiniteError", "as_tensor", "grad", "value_and_grad",
    "concat", "einsum", "exp", "log", "sin", "cos", "sqrt", "tanh",
    "sigmoid", "silu", "layer_norm", "take", "where_const",
]


class NonFiniteError(FloatingPointError):
    """Raised when a forward value feeding a gradient is NaN or infinite."""


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    """A float64 array that records how it was computed."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op")
    __array_ufunc__ = None  # make ndarray (op) Tensor defer to the Tensor's reflected method

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- basics ---------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return self.transpose()

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __len__(self):
        return len(self.data)

    # -- graph construction --------------------------------------------
    @staticmethod
    def _make(data, parents, backward, op):
        parents = tuple(p for p in parents)
        req = any(p.requires_grad for p in parents)
        if not req:
            return Tensor(data, op=op)
        return Tensor(data, True, parents, backward, op)

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), back, "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._make(a.data - b.data, (a, b), back, "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._make(a.data * b.data, (a, b), back, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data / b.data

        def back(g):
            return (_unbroadcast(g / b.data, a.shape),
                    _unbroadcast(-g * out / b.data, b.shape))

        return Tensor._make(out, (a, b), back, "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        p = float(exponent)
        a = self

        def back(g):
            return (g * p * a.data ** (p - 1.0),)

        return Tensor._make(a.data ** p, (a,), back, "pow")

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            ad = a.data[None, :] if a.ndim == 1 else a.data
            bd = b.data[:, None] if b.ndim == 1 else b.data
            if a.ndim == 1:
                g = np.expand_dims(g, -2)
            if b.ndim == 1:
                g = g[..., None]
            ga = g @ np.swapaxes(bd, -1, -2)
            gb = np.swapaxes(ad, -1, -2) @ g
            if a.ndim == 1:
                ga = _unbroadcast(ga, (1,) + a.shape).reshape(a.shape)
            if b.ndim == 1:
                gb = _unbroadcast(gb, b.shape + (1,)).reshape(b.shape)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._make(a.data @ b.data, (a, b), back, "matmul")

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    # -- shape ops -------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        a = self
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")

    def swapaxes(self, i, j):
        a = self
        return Tensor._make(np.swapaxes(a.data, i, j), (a,),
                            lambda g: (np.swapaxes(g, i, j),), "swapaxes")

    def __getitem__(self, idx):
        a = self

        basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis)))
                    for i in (idx if isinstance(idx, tuple) else (idx,)))

        def back(g):
            out = np.zeros_like(a.data)
            if basic:
                out[idx] += g
            else:
                np.add.at(out, idx, g)
            return (out,)

        return Tensor._make(a.data[idx], (a,), back, "getitem")

    def expand_dims(self, axis):
        a = self
        return Tensor._make(np.expand_dims(a.data, axis), (a,),
                            lambda g: (g.reshape(a.shape),), "expand_dims")

    # -- backward -------------------------------------------------------
    def backward(self):
        """Return a dict mapping id(leaf) -> adjoint for every reachable leaf."""
        return _backprop(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unary(a, out, dfn, op):
    return Tensor._make(out, (a,), lambda g: (g * dfn(),), op)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _unary(x, out, lambda: out, "exp")


def log(x):
    x = as_tensor(x)
    return _unary(x, np.log(x.data), lambda: 1.0 / x.data, "log")


def sin(x):
    x = as_tensor(x)
    return _unary(x, np.sin(x.data), lambda: np.cos(x.data), "sin")


def cos(x):
    x = as_tensor(x)
    return _unary(x, np.cos(x.data), lambda: -np.sin(x.data), "cos")


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _unary(x, out, lambda: 0.5 / out, "sqrt")


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _unary(x, out, lambda: 1.0 - out * out, "tanh")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x):
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return _unary(x, out, lambda: out * (1.0 - out), "sigmoid")


def silu(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _unary(x, x.data * s, lambda: s * (1.0 + x.data * (1.0 - s)), "silu")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis),
                        tensors, back, "concat")


def einsum(subscripts, *operands):
    """Differentiable ``np.einsum`` for explicit-output subscripts (``'ij,jk->ik'``)."""
    ops = [as_tensor(o) for o in operands]
    inputs, output = subscripts.replace(" ", "").split("->")
    in_specs = inputs.split(",")
    if any("." in s or len(set(s)) != len(s) for s in in_specs):
        raise ValueError("ellipsis and repeated indices are not supported in einsum subscripts")
    out = np.einsum(subscripts, *[o.data for o in ops], optimize=len(ops) > 2)

    def back(g):
        grads = []
        for k, spec in enumerate(in_specs):
            others = [o.data for m, o in enumerate(ops) if m != k]
            other_specs = [s for m, s in enumerate(in_specs) if m != k]
            # letters summed away in the forward pass that only appear in this operand
            lone = [c for c in spec if c not in output and all(c not in s for s in other_specs)]
            target = "".join(c for c in spec if c not in lone)
            expr = ",".join([output] + other_specs) + "->" + target
            gk = np.einsum(expr, g, *others, optimize=len(others) > 1)
            if lone:
                # target keeps spec order, so re-inserting the summed axes is a reshape
                shape = [1 if c in lone else n for c, n in zip(spec, ops[k].shape)]
                gk = np.broadcast_to(gk.reshape(shape), ops[k].shape).copy()
            grads.append(gk)
        return tuple(grads)

    return Tensor._make(out, ops, back, "einsum")


def layer_norm(x, scale, offset, eps=1e-5):
    """Normalize over the last axis, then apply per-feature ``scale`` and ``offset``."""
    x, scale, offset = as_tensor(x), as_tensor(scale), as_tensor(offset)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * scale.data + offset.data

    def back(g):
        gs = _unbroadcast(g * xhat, scale.shape)
        go = _unbroadcast(g, offset.shape)
        gx_hat = g * scale.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, gs, go

    return Tensor._make(out, (x, scale, offset), back, "layer_norm")


def take(table, indices):
    """Row lookup ``table[indices]`` with scatter-add backward."""
    table = as_tensor(table)
    indices = np.asarray(indices, dtype=np.intp)

    def back(g):
        out = np.zeros_like(table.data)
        np.add.at(out, indices, g)
        return (out,)

    return Tensor._make(table.data[indices], (table,), back, "take")


def where_const(mask, x, fill=0.0):
    """``np.where(mask, x, fill)`` with a constant boolean mask."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    return Tensor._make(np.where(mask, x.data, fill), (x,),
                        lambda g: (_unbroadcast(np.where(mask, g, 0.0), x.shape),), "where")


# ---------------------------------------------------------------------------

def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _backprop(root):
    order = _toposort(root)
    for node in order:
        if not np.all(np.isfinite(node.data)):
            raise NonFiniteError(f"non-finite forward value produced by op {node.op!r} "
                                 f"with shape {node.shape}")
    adj = {id(root): np.ones_like(root.data)}
    leaves = {}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[id(node)] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg
    return leaves


def grad(f, params):
    """Gradients of the scalar tensor ``f`` with respect to each leaf in ``params``.

    Parameters that ``f`` does not depend on receive zero arrays.
    """
    if f.data.size != 1:
        raise ValueError(f"grad needs a scalar output, got shape {f.shape}")
    if not f.requires_grad:
        return [np.zeros_like(p.data) for p in params]
    leaves = _backprop(f)
    return [leaves.get(id(p), np.zeros_like(p.data)).reshape(p.shape) for p in params]


def value_and_grad(fn, params):
    """Evaluate ``fn()`` and return ``(value, grads)`` for ``params``."""
    f = fn()
    return float(f.data), grad(f, params)
