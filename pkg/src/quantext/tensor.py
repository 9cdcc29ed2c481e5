"""Minimal reverse-mode autodiff over numpy arrays.

Each Tensor wraps an ndarray plus an optional gradient. Operations record a
backward closure and their parent tensors; Tensor.backward() runs the
closures in reverse topological order, accumulating into .grad. Storage
defaults to float32 with 64-bit accumulation in reductions; the whole graph
also runs in float64, which is what check_gradients uses to compare against
central finite differences.

Only what the models need is implemented: elementwise arithmetic, relu,
sqrt, matmul, reshape/concat/sum/mean, embedding lookup, same-padded 1-D and
2-D convolutions, non-overlapping 1-D maxpool, softmax, a fused weighted
cross entropy, dropout, and the span outer product that turns start/end
sequences into a span image.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[], None] | None = None
        self._parents: tuple[Tensor, ...] = ()
        self.op = ""

    # ---------------------------------------------------------------- basics

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op or 'leaf'})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    @staticmethod
    def _make(data, parents: tuple["Tensor", ...], op: str) -> "Tensor":
        out = Tensor(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out.op = op
        return out

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (scalar) tensor w.r.t. the graph."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient "
                                 "requires a scalar tensor")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # ------------------------------------------------------------ arithmetic

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor._make(self.data + other.data, (self, other), "add")
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accumulate(_unbroadcast(out.grad, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(out.grad, other.shape))
            out._backward = _bw
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor._make(self.data * other.data, (self, other), "mul")
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(out.grad * self.data, other.shape))
            out._backward = _bw
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor._make(-self.data, (self,), "neg")
        if out.requires_grad:
            out._backward = lambda: self._accumulate(-out.grad)
        return out

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __truediv__(self, other):
        other = self._coerce(other)
        out = Tensor._make(self.data / other.data, (self, other), "div")
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accumulate(_unbroadcast(out.grad / other.data, self.shape))
                if other.requires_grad:
                    g = -out.grad * self.data / (other.data * other.data)
                    other._accumulate(_unbroadcast(g, other.shape))
            out._backward = _bw
        return out

    def sqrt(self):
        out = Tensor._make(np.sqrt(self.data), (self,), "sqrt")
        if out.requires_grad:
            out._backward = lambda: self._accumulate(out.grad / (2.0 * out.data))
        return out

    def relu(self):
        out = Tensor._make(np.maximum(self.data, 0), (self,), "relu")
        if out.requires_grad:
            out._backward = lambda: self._accumulate(out.grad * (self.data > 0))
        return out

    # ---------------------------------------------------------- shape moves

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor._make(self.data.reshape(shape), (self,), "reshape")
        if out.requires_grad:
            out._backward = lambda: self._accumulate(out.grad.reshape(self.shape))
        return out

    def sum(self, axis=None, keepdims: bool = False):
        data = np.sum(self.data, axis=axis, keepdims=keepdims, dtype=np.float64)
        out = Tensor._make(data.astype(self.data.dtype), (self,), "sum")
        if out.requires_grad:
            def _bw():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.shape).copy())
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -------------------------------------------------------------- matrices

    def matmul(self, w: "Tensor"):
        if w.data.ndim != 2 or self.data.ndim < 2:
            raise ValueError("matmul expects x with ndim >= 2 and a 2-D weight")
        if self.shape[-1] != w.shape[0]:
            raise ValueError(
                f"matmul inner dims differ: {self.shape[-1]} vs {w.shape[0]}")
        out = Tensor._make(self.data @ w.data, (self, w), "matmul")
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accumulate(out.grad @ w.data.T)
                if w.requires_grad:
                    axes = tuple(range(self.data.ndim - 1))
                    w._accumulate(np.tensordot(self.data, out.grad,
                                               axes=(axes, axes)))
            out._backward = _bw
        return out

    def __matmul__(self, other):
        return self.matmul(other)

    def softmax(self, axis: int = -1):
        z = self.data - self.data.max(axis=axis, keepdims=True)
        ez = np.exp(z)
        y = ez / ez.sum(axis=axis, keepdims=True, dtype=np.float64).astype(ez.dtype)
        out = Tensor._make(y, (self,), "softmax")
        if out.requires_grad:
            def _bw():
                g = out.grad
                dot = np.sum(g * y, axis=axis, keepdims=True, dtype=np.float64)
                self._accumulate(y * (g - dot.astype(y.dtype)))
            out._backward = _bw
        return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with bias broadcast over leading dims."""
    return x.matmul(w) + b


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor._make(data, tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def _bw():
            pieces = np.split(out.grad, splits, axis=axis)
            for t, g in zip(tensors, pieces):
                if t.requires_grad:
                    t._accumulate(g)
        out._backward = _bw
    return out


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ids (...,) -> (..., dim). Out-of-range ids raise IndexError."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.shape[0]}): "
            f"min={ids.min()} max={ids.max()}")
    out = Tensor._make(table.data[ids], (table,), "embed")
    if out.requires_grad:
        def _bw():
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids.reshape(-1),
                      out.grad.reshape(-1, table.shape[1]))
        out._backward = _bw
    return out


def _batched(x: Tensor, ndim: int) -> tuple[Tensor, bool]:
    """Add a leading batch axis when x arrives unbatched."""
    if x.data.ndim == ndim - 1:
        return x.reshape((1,) + x.shape), True
    return x, False


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 1-D convolution, x ([B,] n, c_in), w (kw, c_in, c_out)."""
    x, squeeze = _batched(x, 3)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ValueError("conv1d expects x (B, n, c_in) and w (kw, c_in, c_out)")
    if w.shape[0] % 2 == 0:
        raise ValueError(f"conv1d kernel width must be odd, got {w.shape[0]}")
    if x.shape[2] != w.shape[1]:
        raise ValueError(
            f"conv1d channel mismatch: input has {x.shape[2]}, kernel expects {w.shape[1]}")
    y = kernels.conv1d_forward(x.data, w.data, b.data)
    out = Tensor._make(y, (x, w, b), "conv1d")
    if out.requires_grad:
        def _bw():
            gx, gw, gb = kernels.conv1d_backward(x.data, w.data, out.grad)
            if x.requires_grad:
                x._accumulate(gx)
            if w.requires_grad:
                w._accumulate(gw)
            if b.requires_grad:
                b._accumulate(gb)
        out._backward = _bw
    return out.reshape(out.shape[1:]) if squeeze else out


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 2-D convolution, x ([B,] H, W, c_in), w (kh, kw, c_in, c_out)."""
    x, squeeze = _batched(x, 4)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects x (B, H, W, c_in) and w (kh, kw, c_in, c_out)")
    if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
        raise ValueError(f"conv2d kernel dims must be odd, got {w.shape[:2]}")
    if x.shape[3] != w.shape[2]:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[3]}, kernel expects {w.shape[2]}")
    y = kernels.conv2d_forward(x.data, w.data, b.data)
    out = Tensor._make(y, (x, w, b), "conv2d")
    if out.requires_grad:
        def _bw():
            gx, gw, gb = kernels.conv2d_backward(x.data, w.data, out.grad)
            if x.requires_grad:
                x._accumulate(gx)
            if w.requires_grad:
                w._accumulate(gw)
            if b.requires_grad:
                b._accumulate(gb)
        out._backward = _bw
    return out.reshape(out.shape[1:]) if squeeze else out


def maxpool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling along the sequence axis; ragged tail
    windows allowed; ties route gradient to the first index."""
    if window <= 0:
        raise ValueError(f"pool window must be positive, got {window}")
    x, squeeze = _batched(x, 3)
    if x.data.ndim != 3:
        raise ValueError("maxpool1d expects x (B, n, c)")
    y, idx = kernels.maxpool1d_forward(x.data, window)
    out = Tensor._make(y, (x,), "maxpool1d")
    if out.requires_grad:
        n = x.shape[1]
        def _bw():
            x._accumulate(kernels.maxpool1d_backward(idx, out.grad, n))
        out._backward = _bw
    return out.reshape(out.shape[1:]) if squeeze else out


def span_outer(s: Tensor, e: Tensor) -> Tensor:
    """Span image precursor: out[b, i, j, k] = s[b, i, k] * e[b, j, k]."""
    if s.shape != e.shape:
        raise ValueError("span_outer expects matching (B, n, d) inputs")
    s, squeeze = _batched(s, 3)
    e, _ = _batched(e, 3)
    if s.data.ndim != 3:
        raise ValueError("span_outer expects matching (B, n, d) inputs")
    y = kernels.span_outer_forward(s.data, e.data)
    out = Tensor._make(y, (s, e), "span_outer")
    if out.requires_grad:
        def _bw():
            gs, ge = kernels.span_outer_backward(s.data, e.data, out.grad)
            if s.requires_grad:
                s._accumulate(gs)
            if e.requires_grad:
                e._accumulate(ge)
        out._backward = _bw
    return out.reshape(out.shape[1:]) if squeeze else out


def dropout(x: Tensor, rate: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return x * Tensor(keep)


def cross_entropy(probs: Tensor, targets: np.ndarray,
                  weights: np.ndarray | None = None,
                  mask: np.ndarray | None = None) -> Tensor:
    """Weighted NLL over a probability tensor (..., C), normalized by the
    total effective weight. targets holds class indices shaped like the
    leading dims; weights/mask broadcast against them."""
    targets = np.asarray(targets)
    c = probs.shape[-1]
    if targets.shape != probs.shape[:-1]:
        raise ValueError(
            f"targets shape {targets.shape} does not match {probs.shape[:-1]}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise IndexError(f"class index out of range [0, {c})")
    eff = np.ones(targets.shape, dtype=np.float64)
    if weights is not None:
        eff = eff * np.asarray(weights, dtype=np.float64)
    if mask is not None:
        eff = eff * np.asarray(mask, dtype=np.float64)
    denom = eff.sum()
    if denom <= 0:
        raise ValueError("cross_entropy: no unmasked positions")
    picked = np.take_along_axis(probs.data, targets[..., None], axis=-1)[..., 0]
    clipped = np.maximum(picked.astype(np.float64), 1e-12)
    loss = float((eff * -np.log(clipped)).sum() / denom)
    out = Tensor._make(np.asarray(loss, dtype=probs.dtype), (probs,), "xent")
    if out.requires_grad:
        def _bw():
            live = picked >= 1e-12
            g = np.zeros_like(probs.data, dtype=np.float64)
            np.put_along_axis(g, targets[..., None],
                              (-eff * live / (clipped * denom))[..., None], axis=-1)
            probs._accumulate((g * float(out.grad)).astype(probs.dtype))
        out._backward = _bw
    return out


class Adam:
    """Adam with per-parameter moment state."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise ValueError("non-finite gradient; step rejected")
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            upd = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= (self.lr * upd).astype(p.data.dtype)


def check_gradients(build: Callable[[], Tensor], leaves: Sequence[Tensor],
                    eps: float = 1e-3) -> float:
    """Compare analytic gradients with central finite differences.

    `build` must return a scalar loss computed from `leaves`. All leaves are
    temporarily upcast to float64 so both the analytic pass and the
    finite-difference probes run at full precision. Returns the worst
    relative error max|a - n| / max(|a|, |n|, 1e-8) over all leaf elements.
    """
    saved = [leaf.data for leaf in leaves]
    try:
        for leaf in leaves:
            leaf.data = leaf.data.astype(np.float64)
            leaf.grad = None
            leaf.requires_grad = True
        loss = build()
        loss.backward()
        analytic = [np.zeros_like(leaf.data) if leaf.grad is None
                    else leaf.grad.copy() for leaf in leaves]
        worst = 0.0
        for leaf, ana in zip(leaves, analytic):
            flat = leaf.data.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                with no_grad():
                    up = float(build().data)
                flat[i] = orig - eps
                with no_grad():
                    down = float(build().data)
                flat[i] = orig
                num[i] = (up - down) / (2.0 * eps)
            num = num.reshape(leaf.data.shape)
            scale = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
            worst = max(worst, float(np.max(np.abs(ana - num) / scale)))
        return worst
    finally:
        for leaf, data in zip(leaves, saved):
            leaf.data = data
            leaf.grad = None
