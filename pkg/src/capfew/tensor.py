"""Dense float64 tensors with reverse-mode gradients.

Deliberately small: row-major numpy storage, a backward closure per
operation, and only the ops the rest of the package needs. Broadcasting
is numpy's, with gradients summed back to the operand shape.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ContractError, DimensionError

_grad_enabled = True


@contextmanager
def no_grad():
    """Suspend graph recording; values only, no backward closures."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Immutable-after-creation value node; grad filled by backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._prev: tuple = ()
        self._backward: Callable[[], None] | None = None

    # -- graph plumbing -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return self.data.item()

    def __float__(self) -> float:
        return self.data.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Backpropagate from this node, visiting each recorded op once,
        in reverse topological order."""
        order = []
        visited = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = _make(self.data + other.data, (self, other))
        if out.requires_grad:
            def _bw():
                _accum(self, out.grad)
                _accum(other, out.grad)
            out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _make(-self.data, (self,))
        if out.requires_grad:
            def _bw():
                _accum(self, -out.grad)
            out._backward = _bw
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = _make(self.data * other.data, (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    _accum(self, out.grad * other.data)
                if other.requires_grad:
                    _accum(other, out.grad * self.data)
            out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = _make(self.data / other.data, (self, other))
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    _accum(self, out.grad / other.data)
                if other.requires_grad:
                    _accum(other, -out.grad * self.data / (other.data * other.data))
            out._backward = _bw
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ContractError("only scalar exponents are supported")
        out = _make(self.data ** p, (self,))
        if out.requires_grad:
            def _bw():
                _accum(self, out.grad * p * self.data ** (p - 1))
            out._backward = _bw
        return out

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def exp(self):
        out = _make(np.exp(self.data), (self,))
        if out.requires_grad:
            def _bw():
                _accum(self, out.grad * out.data)
            out._backward = _bw
        return out

    def log(self):
        out = _make(np.log(self.data), (self,))
        if out.requires_grad:
            def _bw():
                _accum(self, out.grad / self.data)
            out._backward = _bw
        return out

    def sqrt(self):
        out = _make(np.sqrt(self.data), (self,))
        if out.requires_grad:
            def _bw():
                _accum(self, out.grad * 0.5 / out.data)
            out._backward = _bw
        return out

    # -- shape ops ------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _make(self.data.reshape(shape), (self,))
        if out.requires_grad:
            src_shape = self.data.shape
            def _bw():
                _accum(self, out.grad.reshape(src_shape))
            out._backward = _bw
        return out

    def transpose(self, axes: Sequence[int] | None = None):
        out = _make(np.transpose(self.data, axes), (self,))
        if out.requires_grad:
            inv = None if axes is None else np.argsort(axes)
            def _bw():
                _accum(self, np.transpose(out.grad, inv))
            out._backward = _bw
        return out

    @property
    def T(self):
        return self.transpose()

    def narrow(self, axis: int, start: int, length: int):
        """Contiguous slice [start, start+length) along one axis."""
        idx = [slice(None)] * self.data.ndim
        idx[axis] = slice(start, start + length)
        idx = tuple(idx)
        out = _make(self.data[idx], (self,))
        if out.requires_grad:
            shape = self.data.shape
            def _bw():
                g = np.zeros(shape)
                g[idx] = out.grad
                _accum(self, g)
            out._backward = _bw
        return out

    def take_rows(self, indices):
        """Gather rows along axis 0; repeated indices accumulate gradient."""
        indices = np.asarray(indices, dtype=np.intp)
        out = _make(self.data[indices], (self,))
        if out.requires_grad:
            shape = self.data.shape
            def _bw():
                g = np.zeros(shape)
                np.add.at(g, indices, out.grad)
                _accum(self, g)
            out._backward = _bw
        return out

    # -- reductions -----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            shape = self.data.shape
            def _bw():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                _accum(self, np.broadcast_to(g, shape).copy())
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / n


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out._backward = None
    if _grad_enabled:
        prev = tuple(t for t in inputs if t.requires_grad)
        out.requires_grad = bool(prev)
        out._prev = prev
    else:
        out.requires_grad = False
        out._prev = ()
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- operations ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-d tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul needs [m,k] @ [k,n]; got {a.data.shape} @ {b.data.shape}"
        )
    out = _make(a.data @ b.data, (a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                _accum(a, out.grad @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ out.grad)
        out._backward = _bw
    return out


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        def _bw():
            start = 0
            for t, n in zip(tensors, sizes):
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(start, start + n)
                _accum(t, out.grad[tuple(idx)])
                start += n
        out._backward = _bw
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along one axis; rows sum to 1."""
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = _make(p, (x,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            inner = (g * out.data).sum(axis=axis, keepdims=True)
            _accum(x, out.data * (g - inner))
        out._backward = _bw
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _make(shifted - lse, (x,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            _accum(x, g - np.exp(out.data) * g.sum(axis=axis, keepdims=True))
        out._backward = _bw
    return out


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp; tolerates -inf entries (treated as absent)."""
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(x.data - m).sum(axis=axis, keepdims=True)
    val = m + np.log(s)
    out = _make(val if keepdims else np.squeeze(val, axis=axis), (x,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axis)
            w = np.exp(x.data - val)
            _accum(x, w * g)
        out._backward = _bw
    return out


def smoothmin(x: Tensor, lam: float, axis: int = -1, keepdims: bool = False) -> Tensor:
    """-lam * log sum exp(-x/lam): soft minimum, exact min at lam=0.

    The lam=0 branch is forward-only (hard min is not differentiable).
    """
    x = as_tensor(x)
    if lam < 0:
        raise ConfigError(f"smoothing parameter must be >= 0, got {lam}")
    if lam == 0.0:
        return Tensor(np.min(x.data, axis=axis, keepdims=keepdims))
    return -lam * logsumexp(x * (-1.0 / lam), axis=axis, keepdims=keepdims)


def gelu(x: Tensor) -> Tensor:
    """Exact erf-form GELU."""
    x = as_tensor(x)
    c = 1.0 / math.sqrt(2.0)
    phi = 0.5 * (1.0 + erf(x.data * c))
    out = _make(x.data * phi, (x,))
    if out.requires_grad:
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        def _bw():
            _accum(x, out.grad * (phi + x.data * pdf))
        out._backward = _bw
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance over the last axis, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.mean(axis=-1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    return d / (var + eps).sqrt() * gamma + beta


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """softmax(q k^T / sqrt(d)) v for 2-d q:[nq,d], k:[nk,d], v:[nk,dv]."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise DimensionError("attention operands must be 2-d")
    if q.data.shape[1] != k.data.shape[1] or k.data.shape[0] != v.data.shape[0]:
        raise DimensionError(
            f"attention shapes incompatible: q{q.data.shape} k{k.data.shape} v{v.data.shape}"
        )
    d = q.data.shape[1]
    weights = softmax(matmul(q, k.T) * (1.0 / math.sqrt(d)), axis=-1)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


# -- verification and optimization ----------------------------------------


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> float:
    """Max relative error between analytic gradient of f at x and central
    finite differences, denominator max(|analytic|, |numeric|, 1e-8).

    `coords` restricts the finite-difference probe to a subset of flat
    indices (full sweep when None).
    """
    if h <= 0:
        raise ContractError(f"step size must be positive, got {h}")
    if not isinstance(x, Tensor) or not x.requires_grad:
        raise ContractError("grad_check needs a Tensor with requires_grad=True")
    x.zero_grad()
    out = f(x)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check objective must be scalar-valued")
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad
    flat = x.data.reshape(-1)
    aflat = analytic.reshape(-1)
    idxs = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x))
            flat[i] = orig - h
            fm = float(f(x))
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst


def bulk_grad_check(
    f: Callable[[], Tensor],
    tensors: dict,
    h: float = 1e-5,
    coords_per_tensor: int | None = None,
    gen: np.random.Generator | None = None,
) -> float:
    """grad_check over a family of tensors sharing one objective.

    Runs a single backward pass, then probes finite differences at
    coords_per_tensor sampled coordinates of each tensor (all of them
    when None). Returns the worst relative error seen.
    """
    for t in tensors.values():
        t.zero_grad()
    out = f()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("bulk_grad_check objective must be scalar-valued")
    out.backward()
    worst = 0.0
    with no_grad():
        for t in tensors.values():
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            flat = t.data.reshape(-1)
            aflat = analytic.reshape(-1)
            if coords_per_tensor is None or coords_per_tensor >= flat.size:
                idxs = range(flat.size)
            else:
                if gen is None:
                    raise ContractError("coordinate sampling needs a generator")
                idxs = gen.choice(flat.size, size=coords_per_tensor, replace=False)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f())
                flat[i] = orig - h
                fm = float(f())
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * h)
                denom = max(abs(aflat[i]), abs(numeric), 1e-8)
                worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, applied in place to params.data."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {p.data.shape} for '{name}'"
            )
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
