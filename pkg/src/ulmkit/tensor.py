"""Minimal dense tensors with reverse-mode automatic differentiation.

Single CPU backend on top of numpy arrays. Each op records its parents and
a local backward closure; ``backward()`` walks the implicit DAG once in
reverse topological order. Gradients accumulate (explicit ``zero_grad``),
which truncated BPTT relies on.

Float width is configurable (32 or 64); gradient checks require 64.
"""

from __future__ import annotations

import zlib

import numpy as np

_DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Shape-incompatible operands, reported with op name and shapes."""


def set_default_dtype(width: int) -> None:
    global _DEFAULT_DTYPE
    if width == 32:
        _DEFAULT_DTYPE = np.float32
    elif width == 64:
        _DEFAULT_DTYPE = np.float64
    else:
        raise ValueError(f"float width must be 32 or 64, got {width}")


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def param(data, name=None) -> Tensor:
    """A trainable leaf."""
    return Tensor(data, requires_grad=True, name=name)


def _tracked(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, parents, backward) -> Tensor:
    rg = _tracked(*parents)
    return Tensor(data, requires_grad=rg, parents=tuple(parents), backward=backward if rg else None)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, mul(b, _as_tensor(-1.0)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _make(out_data, (a, b), bwd)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * s * (1.0 - s))

    return _make(s, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * (1.0 - t * t))

    return _make(t, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g * (x.data > 0))

    return _make(out_data, (x,), bwd)


def _softmax_data(z: np.ndarray, axis: int) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    s = _softmax_data(x.data, axis)

    def bwd(g):
        if x.requires_grad:
            dot = (g * s).sum(axis=axis, keepdims=True)
            x.accumulate(s * (g - dot))

    return _make(s, (x,), bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out_data = z - lse
    s = np.exp(out_data)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g - s * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (x,), bwd)


def embedding_lookup(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(
            f"embedding_lookup: id out of range for vocabulary of {weight.shape[0]}"
        )
    out_data = weight.data[ids]

    def bwd(g):
        if weight.requires_grad:
            if weight.grad is None:
                weight.grad = np.zeros_like(weight.data)
            np.add.at(weight.grad, ids, g)

    return _make(out_data, (weight,), bwd)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return _make(out_data, tuple(tensors), bwd)


def slice_(x: Tensor, key) -> Tensor:
    out_data = x.data[key]

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[key] = g
            x.accumulate(full)

    return _make(out_data, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g.reshape(x.shape))

    return _make(out_data, (x,), bwd)


def transpose(x: Tensor, axes=None) -> Tensor:
    out_data = x.data.transpose(axes)
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g.transpose(inv))

    return _make(out_data, (x,), bwd)


def sum_(x: Tensor, axis=None) -> Tensor:
    out_data = x.data.sum(axis=axis)

    def bwd(g):
        if x.requires_grad:
            if axis is None:
                x.accumulate(np.broadcast_to(g, x.shape).copy())
            else:
                x.accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _make(out_data, (x,), bwd)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis), _as_tensor(1.0 / n))


def _check_lengths(op: str, x: Tensor, lengths: np.ndarray) -> np.ndarray:
    lengths = np.asarray(lengths)
    if x.data.ndim != 3:
        raise ShapeError(f"{op}: expected (batch, steps, features), got {x.shape}")
    if lengths.shape != (x.shape[0],):
        raise ShapeError(f"{op}: lengths shape {lengths.shape} does not match batch {x.shape[0]}")
    if (lengths < 1).any() or (lengths > x.shape[1]).any():
        raise ValueError(f"{op}: lengths must be in [1, {x.shape[1]}]")
    return lengths


def max_over_time(x: Tensor, lengths) -> Tensor:
    """Per-feature max over the valid (unpadded) steps of each sequence."""
    lengths = _check_lengths("max_over_time", x, lengths)
    b, s, f = x.shape
    mask = np.arange(s)[None, :] < lengths[:, None]
    masked = np.where(mask[:, :, None], x.data, -np.inf)
    argmax = masked.argmax(axis=1)  # (b, f)
    out_data = np.take_along_axis(x.data, argmax[:, None, :], axis=1)[:, 0, :]

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            bi = np.repeat(np.arange(b), f)
            fi = np.tile(np.arange(f), b)
            np.add.at(full, (bi, argmax.ravel(), fi), g.ravel())
            x.accumulate(full)

    return _make(out_data, (x,), bwd)


def mean_over_time(x: Tensor, lengths) -> Tensor:
    """Per-feature mean over the valid steps of each sequence."""
    lengths = _check_lengths("mean_over_time", x, lengths)
    s = x.shape[1]
    mask = (np.arange(s)[None, :] < lengths[:, None]).astype(x.data.dtype)
    w = mask / lengths[:, None]
    out_data = (x.data * w[:, :, None]).sum(axis=1)

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g[:, None, :] * w[:, :, None])

    return _make(out_data, (x,), bwd)


def last_step(x: Tensor, lengths) -> Tensor:
    """Hidden state at the final valid step of each sequence."""
    lengths = _check_lengths("last_step", x, lengths)
    b = x.shape[0]
    idx = lengths - 1

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[np.arange(b), idx] = g
            x.accumulate(full)

    return _make(x.data[np.arange(b), idx], (x,), bwd)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of targets under softmax(logits)."""
    targets = np.asarray(targets)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: expected (batch, classes), got {logits.shape}")
    n, c = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: {targets.shape[0] if targets.ndim else 0} targets for batch {n}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise IndexError(f"cross_entropy: target out of range for {c} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    out_data = -logp[np.arange(n), targets].mean()

    def bwd(g):
        if logits.requires_grad:
            p = np.exp(logp)
            p[np.arange(n), targets] -= 1.0
            logits.accumulate(g * p / n)

    return _make(out_data, (logits,), bwd)


def topo_order(root: Tensor) -> list[Tensor]:
    """Iterative depth-first topological ordering of the graph under root."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad leaf reachable from loss.

    Repeated calls without zeroing accumulate into existing grads.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = topo_order(loss)
    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


class Rng:
    """Deterministic PCG64 stream: same seed and call sequence, same values."""

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, tag: str) -> "Rng":
        """Independent stream derived from this seed and a string tag."""
        mixed = (self.seed * 0x9E3779B97F4A7C15 + zlib.crc32(tag.encode())) & 0xFFFFFFFFFFFFFFFF
        return Rng(mixed)

    def uniform(self, shape, low=0.0, high=1.0) -> np.ndarray:
        self.counter += 1
        return self._gen.uniform(low, high, size=shape).astype(_DEFAULT_DTYPE)

    def normal(self, shape, std=1.0) -> np.ndarray:
        self.counter += 1
        return (self._gen.standard_normal(size=shape) * std).astype(_DEFAULT_DTYPE)

    def keep_mask(self, shape, p_drop: float) -> np.ndarray:
        """Bernoulli keep mask scaled by 1/(1-p_drop); expectation-preserving."""
        self.counter += 1
        if p_drop <= 0.0:
            return np.ones(shape, dtype=_DEFAULT_DTYPE)
        keep = self._gen.random(size=shape) >= p_drop
        return keep.astype(_DEFAULT_DTYPE) / (1.0 - p_drop)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        self.counter += 1
        return self._gen.choice(n, size=k, replace=False)
