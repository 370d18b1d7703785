"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array together with the tape entry that produced it.
Calling ``backward`` on a scalar walks the tape in reverse topological order
and accumulates exact gradients into every reachable leaf. All arithmetic is
64-bit; there is no GPU path and no fusion.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import AbortNonFinite

_uid_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure numeric evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "uid", "_parents", "_backward_fn", "is_param")

    def __init__(self, data, parents=(), backward_fn=None, is_param=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.uid = next(_uid_counter)
        if _grad_enabled:
            self._parents = tuple(parents)
            self._backward_fn = backward_fn
        else:
            self._parents = ()
            self._backward_fn = None
        self.is_param = is_param

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(uid={self.uid}, shape={self.data.shape})"

    # ---- graph traversal ----

    def _toposort(self):
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.uid in seen:
                continue
            seen.add(node.uid)
            stack.append((node, True))
            for p in node._parents:
                if p.uid not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        """Reverse-mode sweep from this scalar; fills .grad on reachable nodes.

        Returns a map node-uid -> gradient array for every parameter leaf.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order = self._toposort()
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)
        return {n.uid: n.grad for n in order if n.is_param}

    # ---- operators ----

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_lift(other))

    def __rsub__(self, other):
        return add(_lift(other), -self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return powc(self, p)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (undo numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, out_data, da, db):
    a, b = _lift(a), _lift(b)

    def bw(g):
        a.grad += _unbroadcast(da(g), a.data.shape)
        b.grad += _unbroadcast(db(g), b.data.shape)

    return Tensor(out_data, (a, b), bw)


def add(a, b):
    a, b = _lift(a), _lift(b)
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    return _binary(a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data)


def div(a, b):
    a, b = _lift(a), _lift(b)
    return _binary(
        a, b, a.data / b.data,
        lambda g: g / b.data,
        lambda g: -g * a.data / (b.data * b.data),
    )


def matmul(a, b):
    a, b = _lift(a), _lift(b)

    def bw(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    return Tensor(a.data @ b.data, (a, b), bw)


def _unary(a, out_data, da):
    a = _lift(a)

    def bw(g):
        a.grad += da(g)

    return Tensor(out_data, (a,), bw)


def exp(a):
    a = _lift(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda g: g * out)


def log(a):
    a = _lift(a)
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def sqrt(a):
    a = _lift(a)
    out = np.sqrt(a.data)
    return _unary(a, out, lambda g: g * 0.5 / out)


def powc(a, p):
    a = _lift(a)
    return _unary(a, a.data ** p, lambda g: g * p * a.data ** (p - 1))


def absval(a):
    a = _lift(a)
    return _unary(a, np.abs(a.data), lambda g: g * np.sign(a.data))


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.data)
    return _unary(a, out, lambda g: g * (1.0 - out * out))


def sigmoid(a):
    a = _lift(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _unary(a, out, lambda g: g * out * (1.0 - out))


def relu(a):
    a = _lift(a)
    return _unary(a, np.maximum(a.data, 0.0), lambda g: g * (a.data > 0.0))


def softplus(a):
    a = _lift(a)
    # overflow-safe: softplus(x) = max(x, 0) + log1p(exp(-|x|))
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return _unary(a, out, lambda g: g / (1.0 + np.exp(-a.data)))


def tsum(a, axis=None):
    a = _lift(a)
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            a.grad += np.broadcast_to(g, a.data.shape)
        else:
            a.grad += np.expand_dims(g, axis)

    return Tensor(out, (a,), bw)


def tmean(a, axis=None):
    a = _lift(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis) * (1.0 / n)


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t.grad += piece

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def dropout(a, rate, seed):
    """Inverted dropout; deterministic given seed. Identity when rate == 0."""
    a = _lift(a)
    if rate == 0.0:
        return a
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    keep = (rng.random(a.data.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return _unary(a, a.data * keep, lambda g: g * keep)


def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy over the batch. labels: int array (B,)."""
    logits = _lift(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = logits.data.shape[-1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    batch = labels.shape[0]
    loss = -log_probs[np.arange(batch), labels].mean()
    probs = np.exp(log_probs)

    def bw(g):
        d = probs.copy()
        d[np.arange(batch), labels] -= 1.0
        logits.grad += g * d / batch

    return Tensor(loss, (logits,), bw)


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "identity": lambda x: x}
# slope bounds used by the Lipschitz product
_ACT_SLOPE = {"relu": 1.0, "tanh": 1.0, "sigmoid": 0.25, "identity": 1.0}


@dataclass
class Layer:
    weight: Tensor  # (in_dim, out_dim)
    bias: Tensor    # (out_dim,)
    activation: str


@dataclass
class Mlp:
    layers: list[Layer]
    final_tanh: bool = False
    dropout_rate: float = 0.0

    @property
    def in_dim(self):
        return self.layers[0].weight.data.shape[0]

    @property
    def out_dim(self):
        return self.layers[-1].weight.data.shape[1]

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out


def mlp_init(in_dim, hidden_dims, out_dim, activation="tanh", final_tanh=False,
             seed=0, dropout_rate=0.0):
    """Glorot-uniform weights, zero biases; deterministic given seed."""
    if in_dim <= 0 or out_dim <= 0 or any(h <= 0 for h in hidden_dims):
        raise ValueError("all dimensions must be positive")
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must lie in [0, 1)")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    dims = [in_dim, *hidden_dims, out_dim]
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        act = activation if i < len(dims) - 2 else "identity"
        layers.append(Layer(Tensor(w, is_param=True),
                            Tensor(np.zeros(fan_out), is_param=True), act))
    return Mlp(layers, final_tanh=final_tanh, dropout_rate=dropout_rate)


def forward(mlp, x, mode="eval", dropout_seed=0):
    """Run the MLP. Dropout fires after each hidden activation, train mode only."""
    x = _lift(x)
    if x.data.shape[-1] != mlp.in_dim:
        raise ValueError(
            f"input dim {x.data.shape[-1]} != mlp in_dim {mlp.in_dim}")
    h = x
    n = len(mlp.layers)
    for i, layer in enumerate(mlp.layers):
        h = matmul(h, layer.weight) + layer.bias
        h = _ACTIVATIONS[layer.activation](h)
        hidden = i < n - 1
        if hidden and mode == "train" and mlp.dropout_rate > 0.0:
            h = dropout(h, mlp.dropout_rate, dropout_seed + i)
    if mlp.final_tanh:
        h = tanh(h)
    return h


def backward(scalar_loss):
    """Spec-surface alias: gradients of a scalar loss, keyed by node uid."""
    return scalar_loss.backward()


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moments for parameter groups; each group carries an lr multiplier."""
    param_groups: list  # list of (list[Tensor], multiplier)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, grads):
    """One Adam update in place. grads: uid -> gradient array."""
    for group, _mult in state.param_groups:
        for p in group:
            g = grads.get(p.uid)
            if g is not None and not np.all(np.isfinite(g)):
                raise AbortNonFinite(f"non-finite gradient for parameter {p.uid}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for group, mult in state.param_groups:
        lr = state.lr * mult
        for p in group:
            g = grads.get(p.uid)
            if g is None:
                continue
            m = state.m.get(p.uid)
            if m is None:
                m = np.zeros_like(p.data)
                state.v[p.uid] = np.zeros_like(p.data)
            v = state.v[p.uid]
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * g * g
            state.m[p.uid], state.v[p.uid] = m, v
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_global_norm(grads, max_norm):
    """Scale the whole gradient map so its global 2-norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return grads


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def _spectral_norm(w, tol=1e-6, max_iter=1000):
    """Operator 2-norm by power iteration on w^T w."""
    if w.size == 0:
        return 0.0
    rng = np.random.Generator(np.random.Philox(key=np.uint64(0)))
    v = rng.standard_normal(w.shape[1])
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(max_iter):
        u = w @ v
        v = w.T @ u
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return 0.0
        v /= norm
        est = np.sqrt(norm)
        if abs(est - prev) <= tol * max(est, 1e-30):
            return est
        prev = est
    return prev


def lipschitz_upper_bound(mlp):
    """Product of layer spectral norms and activation slope bounds."""
    bound = 1.0
    for layer in mlp.layers:
        bound *= _spectral_norm(layer.weight.data) * _ACT_SLOPE[layer.activation]
    if mlp.final_tanh:
        bound *= 1.0
    return bound


def grad_check(f, x, fd_step=1e-5):
    """Max relative error of backward() vs central differences at x.

    f maps a Tensor to a scalar Tensor; x is flattened component-wise.
    Relative error denominator: max(|analytic|, |numeric|, 1e-8).
    """
    x_t = Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64),
                 is_param=True)
    loss = f(x_t)
    loss.backward()
    analytic = x_t.grad.ravel().copy()
    numeric = np.zeros_like(analytic)
    flat = x_t.data.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + fd_step
        with no_grad():
            up = float(f(Tensor(x_t.data)).data)
        flat[i] = orig - fd_step
        with no_grad():
            dn = float(f(Tensor(x_t.data)).data)
        flat[i] = orig
        numeric[i] = (up - dn) / (2.0 * fd_step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
