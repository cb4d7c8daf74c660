"""Minimal reverse-mode differentiation over numpy arrays.

Only the operations the trajectory model needs are provided: affine maps,
LeakyReLU MLPs, GRU cells, diagonal Gaussian heads and an Adam optimizer.
Every ``Tensor`` produced while gradients are enabled remembers its parents
and a closure that pushes its gradient back to them.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

LEAKY_SLOPE = 0.2
LOG_VAR_MIN = -8.0
LOG_VAR_MAX = 4.0

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when inputs do not match the declared layer widths."""


class TrainingError(RuntimeError):
    """Raised on non-finite losses or gradients."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")
    __array_priority__ = 100.0

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None,
                 requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def numpy(self) -> np.ndarray:
        return self.data

    # graph construction -------------------------------------------------
    @staticmethod
    def _make(data, parents, backward):
        if _grad_enabled and any(p.requires_grad for p in parents):
            return Tensor(data, parents, backward, requires_grad=True)
        return Tensor(data)

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        """Back-propagate from this tensor through the recorded tape."""
        if grad is None:
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # intermediate gradients are not needed after propagation
                if not isinstance(node, Param):
                    node.grad = None

    # arithmetic -------------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(g, b.shape))
        return Tensor._make(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(-g, b.shape))
        return Tensor._make(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) - self

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: a._accumulate(-g))

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            a._accumulate(_unbroadcast(g * b.data, a.shape))
            b._accumulate(_unbroadcast(g * a.data, b.shape))
        return Tensor._make(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __matmul__(self, other):
        a, b = self, as_tensor(other, self.dtype)

        def bw(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                if b.data.ndim == 2:
                    a2 = a.data.reshape(-1, a.shape[-1])
                    b._accumulate(a2.T @ g.reshape(-1, g.shape[-1]))
                else:
                    b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
        return Tensor._make(a.data @ b.data, (a, b), bw)

    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))
        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def reshape(self, *shape):
        a = self
        return Tensor._make(a.data.reshape(*shape), (a,),
                            lambda g: a._accumulate(g.reshape(a.shape)))

    def __getitem__(self, idx):
        a = self

        basic = all(isinstance(i, (slice, int, type(Ellipsis)))
                    for i in (idx if isinstance(idx, tuple) else (idx,)))

        def bw(g):
            full = np.zeros_like(a.data)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            a._accumulate(full)
        return Tensor._make(a.data[idx], (a,), bw)

    # elementwise nonlinearities ----------------------------------------------
    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: a._accumulate(g * out))

    def tanh(self):
        a = self
        out = np.tanh(a.data)
        return Tensor._make(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))

    def sigmoid(self):
        a = self
        out = expit(a.data)
        return Tensor._make(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))

    def leaky_relu(self, slope: float = LEAKY_SLOPE):
        a = self
        pos = a.data > 0
        factor = np.where(pos, 1.0, slope).astype(a.dtype)
        return Tensor._make(a.data * factor, (a,), lambda g: a._accumulate(g * factor))

    def square(self):
        return self * self

    def clamp(self, lo: float, hi: float):
        """Clip values; gradient flows only where the input was inside [lo, hi]."""
        a = self
        inside = ((a.data >= lo) & (a.data <= hi)).astype(a.dtype)
        return Tensor._make(np.clip(a.data, lo, hi), (a,), lambda g: a._accumulate(g * inside))


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            t._accumulate(piece)
    return Tensor._make(data, tuple(tensors), bw)


def masked_softmax(scores: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over ``axis`` restricted to ``mask``; all-masked rows give zeros."""
    s = scores.data
    neg = np.where(mask, s, -np.inf)
    mx = np.max(neg, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(mask, np.exp(np.where(mask, s - mx, 0.0)), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    w = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0).astype(s.dtype)

    def bw(g):
        inner = (g * w).sum(axis=axis, keepdims=True)
        scores._accumulate(w * (g - inner))
    return Tensor._make(w, (scores,), bw)


# parameters --------------------------------------------------------------------

class Param(Tensor):
    """A named, learnable parameter block; gradients accumulate until zeroed."""

    __slots__ = ("name",)

    def __init__(self, name: str, values: np.ndarray):
        super().__init__(np.array(values), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


class Module:
    """Base container; subclasses register ``Param`` and ``Module`` attributes."""

    def named_params(self, prefix: str = "") -> list[tuple[str, Param]]:
        out = []
        for key, val in vars(self).items():
            if isinstance(val, Param):
                out.append((prefix + key, val))
            elif isinstance(val, Module):
                out.extend(val.named_params(prefix + key + "."))
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.extend(m.named_params(f"{prefix}{key}.{i}."))
        return out

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


def _glorot(rng: np.random.Generator, n_in: int, n_out: int, dtype) -> np.ndarray:
    lim = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_in, n_out)).astype(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Param("weight", _glorot(rng, n_in, n_out, dtype))
        self.bias = Param("bias", np.zeros(n_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"expected last dim {self.n_in}, got {x.shape[-1]}")
        return x @ self.weight + self.bias


class MLP(Module):
    """Stack of affine layers, each followed by LeakyReLU(0.2).

    ``layer_spec`` lists widths including the input, e.g. ``[4, 64, 64]``.
    With ``final_activation=False`` the last layer stays affine.
    """

    def __init__(self, layer_spec: Sequence[int], rng: np.random.Generator,
                 dtype=np.float32, final_activation: bool = True):
        if len(layer_spec) < 2:
            raise ShapeError("layer_spec needs at least input and output widths")
        self.layer_spec = list(layer_spec)
        self.final_activation = final_activation
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(layer_spec[:-1], layer_spec[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < n - 1 or self.final_activation:
                x = x.leaky_relu(LEAKY_SLOPE)
        return x


def mlp_forward(params: MLP, x, layer_spec: Sequence[int] | None = None) -> Tensor:
    """Functional form of ``MLP.__call__`` with an explicit width check."""
    if layer_spec is not None and list(layer_spec) != params.layer_spec:
        raise ShapeError(f"layer_spec {list(layer_spec)} != module spec {params.layer_spec}")
    return params(as_tensor(x, params.layers[0].weight.dtype))


class GRUCell(Module):
    """Gated recurrent unit; gates are ordered (reset, update, candidate).

    r = σ(x W_r + h U_r + b_r), u = σ(x W_u + h U_u + b_u),
    n = tanh(x W_n + b_n + r ⊙ (h U_n + c_n)), h' = (1 - u) ⊙ n + u ⊙ h.
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.w_in = Param("w_in", np.concatenate(
            [_glorot(rng, n_in, n_hidden, dtype) for _ in range(3)], axis=1))
        self.w_hid = Param("w_hid", np.concatenate(
            [_glorot(rng, n_hidden, n_hidden, dtype) for _ in range(3)], axis=1))
        self.b_in = Param("b_in", np.zeros(3 * n_hidden, dtype=dtype))
        self.b_hid = Param("b_hid", np.zeros(3 * n_hidden, dtype=dtype))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in or h.shape[-1] != self.n_hidden:
            raise ShapeError(
                f"GRU expects ({self.n_in}, {self.n_hidden}), got ({x.shape[-1]}, {h.shape[-1]})")
        n = self.n_hidden
        gi = x @ self.w_in + self.b_in
        gh = h @ self.w_hid + self.b_hid
        r = (gi[..., :n] + gh[..., :n]).sigmoid()
        u = (gi[..., n:2 * n] + gh[..., n:2 * n]).sigmoid()
        cand = (gi[..., 2 * n:] + r * gh[..., 2 * n:]).tanh()
        return cand + u * (h - cand)


def gru_step(params: GRUCell, x, prev) -> Tensor:
    dtype = params.w_in.dtype
    return params(as_tensor(x, dtype), as_tensor(prev, dtype))


# diagonal Gaussians ---------------------------------------------------------------

@dataclass
class DiagGaussian:
    mean: Tensor
    log_var: Tensor

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var.data)


class GaussianHead(Module):
    """Maps features to a diagonal Gaussian; log-variance clamped to [-8, 4]."""

    def __init__(self, n_in: int, n_hidden: Sequence[int], n_out: int,
                 rng: np.random.Generator, dtype=np.float32):
        widths = [n_in, *n_hidden]
        self.hidden = MLP(widths, rng, dtype) if n_hidden else None
        self.out = Linear(widths[-1], 2 * n_out, rng, dtype)
        self.n_out = n_out

    def __call__(self, x: Tensor) -> DiagGaussian:
        if self.hidden is not None:
            x = self.hidden(x)
        y = self.out(x)
        return DiagGaussian(y[..., :self.n_out], y[..., self.n_out:].clamp(LOG_VAR_MIN, LOG_VAR_MAX))


def gaussian_sample(dist: DiagGaussian, noise) -> Tensor:
    """Reparameterized draw: mean + exp(log_var / 2) * noise."""
    noise = np.asarray(noise, dtype=dist.mean.dtype)
    if noise.shape != dist.mean.shape:
        raise ShapeError(f"noise shape {noise.shape} != mean shape {dist.mean.shape}")
    return dist.mean + (dist.log_var * 0.5).exp() * noise


def gaussian_log_density(dist: DiagGaussian, point) -> Tensor:
    """Log density summed over the last axis."""
    point = as_tensor(point, dist.mean.dtype)
    diff = point - dist.mean
    quad = diff * diff * (-dist.log_var).exp()
    return ((quad + dist.log_var + math.log(2.0 * math.pi)) * -0.5).sum(axis=-1)


def kl_diag_gaussians(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p) in closed form, summed over the last axis."""
    var_ratio = (q.log_var - p.log_var).exp()
    diff = q.mean - p.mean
    term = var_ratio + diff * diff * (-p.log_var).exp() - 1.0 - (q.log_var - p.log_var)
    return (term * 0.5).sum(axis=-1)


# optimizer -----------------------------------------------------------------------

class Adam:
    def __init__(self, params: Iterable[tuple[str, Param]], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.named = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.named}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named}
        self.t = 0

    def step(self):
        self.t += 1
        adam_update(self.named, self.lr, self.beta1, self.beta2, self.eps, self.t, self.m, self.v)


def adam_update(blocks, step_size, beta1, beta2, eps, t, m=None, v=None):
    """One bias-corrected Adam step over ``(name, Param)`` pairs; zeroes gradients.

    ``m`` and ``v`` are dicts of first/second moments keyed by name and are
    created (zeros) when omitted.
    """
    blocks = list(blocks)
    for name, p in blocks:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter block {name!r}")
    if m is None:
        m = {n: np.zeros_like(p.data) for n, p in blocks}
    if v is None:
        v = {n: np.zeros_like(p.data) for n, p in blocks}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in blocks:
        g = p.grad
        m[name] = beta1 * m[name] + (1.0 - beta1) * g
        v[name] = beta2 * v[name] + (1.0 - beta2) * g * g
        m_hat = m[name] / c1
        v_hat = v[name] / c2
        p.data -= (step_size * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        p.zero_grad()
    return m, v
