"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every op builds a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back to them.  ``backward`` sorts
the recorded ops topologically and runs each closure exactly once.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand extents do not line up."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = "leaf"):
        arr = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, rule) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents), op=op)
    if needs:
        out._backward = rule
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Graph:
    """Recorded ops reachable from a loss, in topological order."""

    def __init__(self, ops: list[Tensor]):
        self.ops = ops

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return cls([t for t in order if t._backward is not None])

    def __len__(self) -> int:
        return len(self.ops)


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Fill ``.grad`` of every reachable leaf with d(loss)/d(leaf)."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = graph or Graph.from_loss(loss)
    # intermediate grads are fresh per pass; leaves accumulate
    for t in graph.ops:
        t.grad = np.zeros_like(t.data)
    loss.grad = np.ones_like(loss.data)
    for t in reversed(graph.ops):
        t._backward(t.grad)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def rule(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", rule)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def rule(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", rule)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: _accum(a, -g))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), "scale", lambda g: _accum(a, g * c))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _make(out_data, (a,), "exp", lambda g: _accum(a, g * out_data))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), "log", lambda g: _accum(a, g / a.data))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: _accum(a, g * mask))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so neither branch overflows
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(s, (a,), "sigmoid", lambda g: _accum(a, g * s * (1.0 - s)))


# ---------------------------------------------------------------- reductions / shape

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _make(np.array(a.data.sum()), (a,), "sum", lambda g: _accum(a, np.broadcast_to(g, a.shape).copy()))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.array(a.data.mean()), (a,), "mean",
                 lambda g: _accum(a, np.full(a.shape, float(g) / n)))


def reshape(a: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from exc
    return _make(out, (a,), "reshape", lambda g: _accum(a, g.reshape(a.shape)))


# ---------------------------------------------------------------- layers

def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for x of shape (B, D) and weight (D, E)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"affine: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"affine: bias {bias.shape} does not match weight {weight.shape}")

    def rule(g):
        _accum(x, g @ weight.data.T)
        _accum(weight, x.data.T @ g)
        _accum(bias, g.sum(axis=0))

    return _make(x.data @ weight.data + bias.data, (x, weight, bias), "affine", rule)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    """Padded NCHW input -> (B*H'*W', kh*kw*C) patch matrix, channels innermost."""
    xh = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    win = sliding_window_view(xh, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]  # B,H',W',C,kh,kw
    B, Ho, Wo, C = win.shape[:4]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * C), Ho, Wo


def _correlate(xp: np.ndarray, kernel: np.ndarray, stride: int):
    Cout, Cin, kh, kw = kernel.shape
    cols, Ho, Wo = _im2col(xp, kh, kw, stride)
    kmat = kernel.transpose(0, 2, 3, 1).reshape(Cout, -1)
    out = (cols @ kmat.T).reshape(xp.shape[0], Ho, Wo, Cout).transpose(0, 3, 1, 2)
    return out, cols


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded strided cross-correlation, NCHW layout."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    B, Cin, H, W = x.shape
    Cout, Ck, kh, kw = kernel.shape
    if Ck != Cin:
        raise ShapeError(f"conv2d: input has {Cin} channels but kernel expects {Ck} ({x.shape} vs {kernel.shape})")
    if bias.shape != (Cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {Cout} output channels")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d: stride must be >= 1 and pad >= 0")
    if kh > H + 2 * pad or kw > W + 2 * pad:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {H + 2 * pad}x{W + 2 * pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    out, cols = _correlate(xp, kernel.data, stride)
    out = out + bias.data[None, :, None, None]
    Ho, Wo = out.shape[2:]

    def rule(g):
        _accum(bias, g.sum(axis=(0, 2, 3)))
        if kernel.requires_grad:
            gf = g.transpose(0, 2, 3, 1).reshape(-1, Cout)
            dk = (gf.T @ cols).reshape(Cout, kh, kw, Cin).transpose(0, 3, 1, 2)
            _accum(kernel, dk)
        if x.requires_grad:
            # input gradient = full correlation of the stride-dilated output
            # gradient with the flipped, channel-transposed kernel
            hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
            gd = np.zeros((B, Cout, hs + 2 * (kh - 1), ws + 2 * (kw - 1)))
            gd[:, :, kh - 1:kh - 1 + hs:stride, kw - 1:kw - 1 + ws:stride] = g
            flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            core, _ = _correlate(gd, flipped, 1)
            dxp = np.zeros_like(xp)
            dxp[:, :, :core.shape[2], :core.shape[3]] = core
            _accum(x, dxp[:, :, pad:pad + H, pad:pad + W])

    return _make(np.ascontiguousarray(out), (x, kernel, bias), "conv2d", rule)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the two trailing axes."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2x expects rank-4 input, got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    B, C, H, W = x.shape

    def rule(g):
        _accum(x, g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)))

    return _make(out, (x,), "upsample2x", rule)


# ---------------------------------------------------------------- losses

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of (B, C) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross-entropy: logits {logits.shape} vs labels {labels.shape}")
    B, C = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def rule(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        _accum(logits, p * (float(g) / B))

    return _make(np.array(loss), (logits,), "softmax_cross_entropy", rule)


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over every element."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"gaussian_kl: mean {mu.shape} vs logvar {logvar.shape}")
    ev = np.exp(logvar.data)
    val = 0.5 * np.sum(mu.data ** 2 + ev - 1.0 - logvar.data)

    def rule(g):
        g = float(g)
        _accum(mu, g * mu.data)
        _accum(logvar, 0.5 * g * (ev - 1.0))

    return _make(np.array(val), (mu, logvar), "gaussian_kl", rule)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements; target is treated as a constant."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {t.shape}")
    diff = pred.data - t
    n = diff.size

    def rule(g):
        _accum(pred, (2.0 * float(g) / n) * diff)

    return _make(np.array(np.mean(diff * diff)), (pred,), "mse", rule)


# ---------------------------------------------------------------- latent roll

def roll_bins(z: Tensor, shifts, frac=None) -> Tensor:
    """Cyclically shift the last axis of a (B, K, N) tensor, per sample.

    ``out[b, k, (n + s_b) % N] = z[b, k, n]``.  With ``frac`` given, the
    result blends the shift by ``s_b`` and ``s_b + 1`` linearly.
    """
    if z.data.ndim != 3:
        raise ShapeError(f"roll_bins expects (B, K, N), got {z.shape}")
    B, K, N = z.shape
    shifts = np.broadcast_to(np.asarray(shifts, dtype=np.int64), (B,))
    idx = (np.arange(N)[None, :] - shifts[:, None]) % N  # out[n] = in[(n - s) % N]
    gather = idx[:, None, :].repeat(K, axis=1)
    out = np.take_along_axis(z.data, gather, axis=2)
    if frac is None:
        def rule(g):
            gz = np.zeros_like(z.data)
            np.put_along_axis(gz, gather, g, axis=2)
            _accum(z, gz)

        return _make(out, (z,), "roll", rule)

    f = np.broadcast_to(np.asarray(frac, dtype=np.float64), (B,))[:, None, None]
    gather1 = ((idx - 1) % N)[:, None, :].repeat(K, axis=1)
    out1 = np.take_along_axis(z.data, gather1, axis=2)

    def rule_interp(g):
        gz = np.zeros_like(z.data)
        np.put_along_axis(gz, gather, (1.0 - f) * g, axis=2)
        g1 = np.zeros_like(z.data)
        np.put_along_axis(g1, gather1, f * g, axis=2)
        _accum(z, gz + g1)

    return _make((1.0 - f) * out + f * out1, (z,), "roll_interp", rule_interp)
