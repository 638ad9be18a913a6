"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every differentiable stage of the pipeline (transformers, attribute heads,
image losses, the splat-render bridge) runs on this tape so analytic
gradients can be checked against central finite differences at float64
precision.  The engine is deliberately small: dense ndarray values, a
closure per op, topological-order backward.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph construction (sampling / eval)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An ndarray plus the tape edges needed to backpropagate into it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def param(data, name=None):
        return Tensor(np.asarray(data), requires_grad=True, name=name)

    @staticmethod
    def _wrap(x, like=None):
        if isinstance(x, Tensor):
            return x
        dtype = like.data.dtype if like is not None else np.float64
        return Tensor(np.asarray(x, dtype=dtype))

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # -- graph plumbing -------------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            return Tensor(data, requires_grad=True, parents=parents, backward=backward)
        return Tensor(data)

    def backward(self, seed=None):
        """Backpropagate from this tensor; `seed` defaults to ones."""
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self.grad = np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=self.data.dtype)
        for t in reversed(topo):
            if t._backward is not None:
                t._backward(t.grad)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = Tensor._wrap(other, self)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accum(-g)

        return Tensor._make(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-Tensor._wrap(other, self))

    def __rsub__(self, other):
        return Tensor._wrap(other, self) + (-self)

    def __mul__(self, other):
        other = Tensor._wrap(other, self)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._wrap(other, self)
        out_data = self.data / other.data

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / (other.data * other.data), other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    def __rtruediv__(self, other):
        return Tensor._wrap(other, self) / self

    def __pow__(self, k):
        assert np.isscalar(k)
        out_data = self.data ** k

        def bwd(g):
            self._accum(g * k * self.data ** (k - 1))

        return Tensor._make(out_data, (self,), bwd)

    def __matmul__(self, other):
        other = Tensor._wrap(other, self)
        assert self.data.ndim >= 2 and other.data.ndim >= 2, "matmul requires matrix operands"
        out_data = self.data @ other.data

        def bwd(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accum(_unbroadcast(ga, self.data.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accum(_unbroadcast(gb, other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out_data = self.data.reshape(shape)

        def bwd(g):
            self._accum(g.reshape(old))

        return Tensor._make(out_data, (self,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inv = np.argsort(axes)
        out_data = self.data.transpose(axes)

        def bwd(g):
            self._accum(g.transpose(inv))

        return Tensor._make(out_data, (self,), bwd)

    def swapaxes(self, a, b):
        axes = list(range(self.data.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)

        return Tensor._make(out_data, (self,), bwd)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.data.shape).copy() if np.ndim(g) else np.full_like(self.data, g))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor._make(out_data, (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis):
        """Max along one axis; gradient flows to the (first) argmax."""
        ax = axis % self.data.ndim
        out_data = self.data.max(axis=ax)
        idx = self.data.argmax(axis=ax)

        def bwd(g):
            full = np.zeros_like(self.data)
            grid = list(np.indices(out_data.shape))
            sel = tuple(grid[:ax]) + (idx,) + tuple(grid[ax:])
            np.add.at(full, sel, g)
            self._accum(full)

        return Tensor._make(out_data, (self,), bwd)


# -- elementwise functions ----------------------------------------------------


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def bwd(g):
        x._accum(g * out_data)

    return Tensor._make(out_data, (x,), bwd)


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)

    def bwd(g):
        x._accum(g / x.data)

    return Tensor._make(out_data, (x,), bwd)


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)

    def bwd(g):
        x._accum(g * 0.5 / out_data)

    return Tensor._make(out_data, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def bwd(g):
        x._accum(g * (1.0 - out_data * out_data))

    return Tensor._make(out_data, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        x._accum(g * out_data * (1.0 - out_data))

    return Tensor._make(out_data, (x,), bwd)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU; smooth everywhere (FD friendly)."""
    u = x.data
    inner = _GELU_C * (u + 0.044715 * u ** 3)
    t = np.tanh(inner)
    out_data = 0.5 * u * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * u ** 2)
        x._accum(g * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dinner))

    return Tensor._make(out_data, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0.0)

    def bwd(g):
        x._accum(g * mask)

    return Tensor._make(out_data, (x,), bwd)


def clip(x: Tensor, lo, hi) -> Tensor:
    """Hard clip; gradient passes only inside the interval."""
    mask = (x.data >= lo) & (x.data <= hi)
    out_data = np.clip(x.data, lo, hi)

    def bwd(g):
        x._accum(g * mask)

    return Tensor._make(out_data, (x,), bwd)


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    out_data = np.abs(x.data)

    def bwd(g):
        x._accum(g * sign)

    return Tensor._make(out_data, (x,), bwd)


def softmax(x: Tensor, axis=-1) -> Tensor:
    # Max-shift is a detached constant: it cancels in the quotient, so the
    # exact softmax gradient is preserved.
    shift = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - shift)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        x._accum(out_data * (g - dot))

    return Tensor._make(out_data, (x,), bwd)


def concatenate(tensors, axis=-1) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    return Tensor._make(out_data, tuple(tensors), bwd)


def stack(tensors, axis=0) -> Tensor:
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))

    return Tensor._make(out_data, tuple(tensors), bwd)


def take_rows(table: Tensor, indices) -> Tensor:
    """Row gather (embedding lookup) with scatter-add backward."""
    idx = np.asarray(indices)
    out_data = table.data[idx]

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accum(full)

    return Tensor._make(out_data, (table,), bwd)


def custom_op(inputs, out_data, grad_fn) -> Tensor:
    """Wrap an externally computed op.

    `grad_fn(upstream)` must return one gradient array (or None) per input.
    """
    inputs = tuple(inputs)

    def bwd(g):
        grads = grad_fn(g)
        for t, gr in zip(inputs, grads):
            if t.requires_grad and gr is not None:
                t._accum(gr)

    return Tensor._make(out_data, inputs, bwd)


# -- parameter container and optimizer ----------------------------------------


class ParamStore:
    """Ordered named parameter collection shared by models and checkpoints."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, data):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Tensor.param(np.asarray(data), name=name)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params.keys())

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_dict(self):
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in state.items():
            arr = np.asarray(v, dtype=self._params[k].data.dtype)
            if arr.shape != self._params[k].data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self._params[k].data.shape}")
            self._params[k].data = arr.copy()


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * (g * g)
            mhat = self.m[i] / b1t
            vhat = self.v[i] / b2t
            if self.weight_decay:
                p.data = p.data - self.lr * self.weight_decay * p.data
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
