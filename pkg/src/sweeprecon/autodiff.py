"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tensor records the operation that produced it as (parent, vjp)
pairs; backward() walks the tape in reverse topological order and
accumulates vector-Jacobian products. Only the handful of operations
the sine-activated MLP needs are provided. Everything is dtype-generic:
float64 for gradient checks, float32 for faster training.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class Tensor:
    __slots__ = ("data", "parents", "grad", "requires_grad", "name")

    def __init__(self, data, parents=(), requires_grad=False, name=""):
        self.data = np.asarray(data)
        self.parents = parents
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None


def parameter(data, name="") -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def _unary(x: Tensor, out_data, vjp) -> Tensor:
    return Tensor(out_data, parents=((x, vjp),))


def matmul(x: Tensor, w: Tensor) -> Tensor:
    out = x.data @ w.data
    return Tensor(
        out,
        parents=(
            (x, lambda g: g @ w.data.T),
            (w, lambda g: x.data.T @ g),
        ),
    )


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    out = x.data + b.data
    return Tensor(
        out,
        parents=(
            (x, lambda g: g),
            (b, lambda g: g.sum(axis=0)),
        ),
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data + b.data, parents=((a, lambda g: g), (b, lambda g: g)))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return _unary(x, x.data * c, lambda g: g * c)


def sin(x: Tensor) -> Tensor:
    return _unary(x, np.sin(x.data), lambda g: g * np.cos(x.data))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _unary(x, y, lambda g: g * y * (1.0 - y))


def sum_squared_error(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    diff = pred.data - target
    out = np.asarray((diff * diff).sum(), dtype=pred.dtype)
    return _unary(pred, out, lambda g: g * 2.0 * diff)


def masked_softmax_cross_entropy(logits: Tensor, valid_rows, labels) -> Tensor:
    """Summed CE over the selected rows only.

    Rows not listed in valid_rows are never read, so their values can
    change arbitrarily without altering the result or the gradient
    (their gradient rows are exactly zero).
    """
    valid_rows = np.asarray(valid_rows, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    if valid_rows.shape != labels.shape:
        raise ValueError("valid_rows and labels must align")
    dtype = logits.dtype
    if valid_rows.size == 0:
        return _unary(
            logits,
            np.asarray(0.0, dtype=dtype),
            lambda g: np.zeros_like(logits.data),
        )
    z = logits.data[valid_rows]
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    log_denom = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_denom
    ce = np.asarray(-log_probs[np.arange(len(labels)), labels].sum(), dtype=dtype)

    def vjp(g):
        soft = np.exp(log_probs)
        soft[np.arange(len(labels)), labels] -= 1.0
        full = np.zeros_like(logits.data)
        full[valid_rows] = g * soft
        return full

    return _unary(logits, ce, vjp)


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every tape node."""
    if loss.data.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in node.parents:
            contribution = vjp(node.grad)
            if parent.grad is None:
                parent.grad = contribution
            else:
                parent.grad = parent.grad + contribution


class Adam:
    """Adam with bias correction; state kept per parameter, in order."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / (1.0 - b1**self.t)
            v_hat = self.v[i] / (1.0 - b2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
