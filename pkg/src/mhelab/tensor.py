"""Dense tensors with a tape-based reverse-mode autodiff.

Storage is a C-ordered numpy array (row-major). Every differentiable
primitive is a :class:`Function` subclass with explicit ``forward`` and
``backward`` rules; composite operations are built from these in Python.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericInputError

MASK_VALUE = -1e30

_grad_enabled = True


class no_grad:
    """Context manager that stops recording functions for backward."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


class Tensor:
    """N-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._ctx: Function | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    # operator sugar over the primitives
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))


class Function:
    """One recorded primitive. Subclasses define forward/backward on ndarrays.

    ``backward`` receives the upstream gradient and returns one gradient per
    input (``None`` where an input needs none).
    """

    name = "function"

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.saved: tuple = ()

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        if not np.isfinite(out).all():
            raise NumericInputError(f"{cls.name} produced non-finite values")
        result = Tensor(out)
        if _grad_enabled and any(t.requires_grad for t in inputs):
            result.requires_grad = True
            result._ctx = fn
        return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, where ``shape`` is a suffix of grad.shape."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)))


def _check_suffix(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise DimensionError(f"{op}: cannot broadcast {b.shape} against {a.shape}")


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
        if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise DimensionError(f"matmul batch dimensions differ: {a.shape} x {b.shape}")
        self.saved = (a, b)
        return a @ b

    def backward(self, grad):
        a, b = self.saved
        ga = grad @ np.swapaxes(b, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            a2 = a.reshape(-1, a.shape[-1])
            gb = a2.T @ grad.reshape(-1, grad.shape[-1])
        else:
            gb = np.swapaxes(a, -1, -2) @ grad
        return ga, gb


class Add(Function):
    name = "add"

    def forward(self, a, b):
        _check_suffix(a, b, "add")
        self.saved = (b.shape,)
        return a + b

    def backward(self, grad):
        return grad, _unbroadcast(grad, self.saved[0])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _check_suffix(a, b, "mul")
        self.saved = (a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return grad * b, _unbroadcast(grad * a, b.shape)


class Scale(Function):
    name = "scale"

    def forward(self, a, factor: float = 1.0):
        self.saved = (factor,)
        return a * a.dtype.type(factor)

    def backward(self, grad):
        return (grad * grad.dtype.type(self.saved[0]),)


class Sum(Function):
    name = "sum"

    def forward(self, a):
        self.saved = (a.shape,)
        return np.asarray(a.sum(), dtype=a.dtype)

    def backward(self, grad):
        return (np.broadcast_to(grad, self.saved[0]).copy(),)


class Reshape(Function):
    name = "reshape"

    def forward(self, a, shape=()):
        self.saved = (a.shape,)
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.saved[0]),)


class SwapAxes(Function):
    name = "swapaxes"

    def forward(self, a, axes=(-1, -2)):
        self.saved = axes
        return np.ascontiguousarray(np.swapaxes(a, *axes))

    def backward(self, grad):
        return (np.ascontiguousarray(np.swapaxes(grad, *self.saved)),)


class ExpandHeads(Function):
    """(B, 1, L, d) -> (B, n, L, d) by repetition along the head axis."""

    name = "expand_heads"

    def forward(self, a, n=1):
        if a.ndim != 4 or a.shape[1] != 1:
            raise DimensionError(f"expand_heads needs (B, 1, L, d), got {a.shape}")
        return np.ascontiguousarray(np.broadcast_to(a, (a.shape[0], n) + a.shape[2:]))

    def backward(self, grad):
        return (grad.sum(axis=1, keepdims=True),)


class HeadEmbed(Function):
    """Combine a shared (B, L, d) projection with n head embeddings -> (B, n, L, d).

    ``mode="add"`` gives M + e_i; ``mode="mul"`` gives M * (e_i + 1).
    """

    name = "head_embed"

    def forward(self, m, e, mode="add"):
        if m.ndim != 3 or e.ndim != 2 or m.shape[-1] != e.shape[-1]:
            raise DimensionError(f"head_embed needs (B, L, d) and (n, d), got {m.shape} and {e.shape}")
        self.saved = (m, e, mode)
        if mode == "add":
            return m[:, None] + e[None, :, None, :]
        if mode == "mul":
            return m[:, None] * (e + 1)[None, :, None, :]
        raise ContractError(f"unknown head embedding mode {mode!r}")

    def backward(self, grad):
        m, e, mode = self.saved
        if mode == "add":
            return grad.sum(axis=1), grad.sum(axis=(0, 2))
        return (grad * (e + 1)[None, :, None, :]).sum(axis=1), (grad * m[:, None]).sum(axis=(0, 2))


class SoftmaxRows(Function):
    name = "softmax_rows"

    def forward(self, a):
        if np.isnan(a).any():
            raise NumericInputError("softmax_rows received NaN input")
        shifted = a - a.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=-1, keepdims=True)
        self.saved = (p,)
        return p

    def backward(self, grad):
        (p,) = self.saved
        return (p * (grad - (grad * p).sum(axis=-1, keepdims=True)),)


class LayerNorm(Function):
    name = "layer_norm"

    def forward(self, x, gamma, beta, eps=1e-5):
        d = x.shape[-1]
        if gamma.shape != (d,) or beta.shape != (d,):
            raise DimensionError(f"layer_norm params must be ({d},), got {gamma.shape}, {beta.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
        xhat = xc * rstd
        self.saved = (xhat, rstd, gamma)
        return xhat * gamma + beta

    def backward(self, grad):
        xhat, rstd, gamma = self.saved
        d = xhat.shape[-1]
        gxhat = grad * gamma
        gx = rstd / d * (
            d * gxhat
            - gxhat.sum(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        red = tuple(range(grad.ndim - 1))
        return gx, (grad * xhat).sum(axis=red), grad.sum(axis=red)


_GELU_C = np.sqrt(2.0 / np.pi)


class GELU(Function):
    """Tanh approximation of GELU."""

    name = "gelu"

    def forward(self, x):
        c = x.dtype.type(_GELU_C)
        inner = c * (x + x.dtype.type(0.044715) * (x * x * x))
        t = np.tanh(inner)
        self.saved = (x, t)
        return 0.5 * x * (1.0 + t)

    def backward(self, grad):
        x, t = self.saved
        c = x.dtype.type(_GELU_C)
        dinner = c * (1.0 + x.dtype.type(3 * 0.044715) * x * x)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (grad * d,)


class Embedding(Function):
    name = "embedding"

    def forward(self, table, ids=None):
        ids = np.asarray(ids)
        if ids.min(initial=0) < 0 or ids.max(initial=0) >= table.shape[0]:
            raise DimensionError(f"embedding ids out of range for table of {table.shape[0]} rows")
        self.saved = (ids, table.shape)
        return table[ids]

    def backward(self, grad):
        ids, shape = self.saved
        g = np.zeros(shape, dtype=grad.dtype)
        np.add.at(g, ids.reshape(-1), grad.reshape(-1, shape[-1]))
        return (g,)


class CrossEntropy(Function):
    """Weighted mean of -log softmax(logits)[target] over positions."""

    name = "cross_entropy"

    def forward(self, logits, targets=None, weights=None):
        targets = np.asarray(targets)
        if logits.shape[:-1] != targets.shape:
            raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
        w = np.ones(targets.shape, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
        total = w.sum()
        if total <= 0:
            raise ContractError("cross_entropy needs at least one scored position")
        shifted = logits - logits.max(axis=-1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        logp = shifted - logz
        nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        self.saved = (logp, targets, w, total)
        return np.asarray((nll * w).sum() / total, dtype=logits.dtype)

    def backward(self, grad):
        logp, targets, w, total = self.saved
        g = np.exp(logp)
        np.put_along_axis(g, targets[..., None], np.take_along_axis(g, targets[..., None], -1) - 1.0, -1)
        return (g * (w / total)[..., None] * grad,)


class Attention(Function):
    """Fused scaled-dot attention over (..., L, d) blocks."""

    name = "attention"

    def forward(self, q, k, v, causal=False):
        if q.shape != k.shape or q.shape != v.shape:
            raise DimensionError(f"attention shapes differ: Q {q.shape}, K {k.shape}, V {v.shape}")
        lead = q.shape[:-2]
        L, d = q.shape[-2:]
        q3 = q.reshape(-1, L, d)
        k3 = k.reshape(-1, L, d)
        v3 = v.reshape(-1, L, d)
        self.causal = bool(causal)
        out, probs = kernels.attention_forward(q3, k3, v3, self.causal)
        self.saved = (q3, k3, v3, probs, q.shape)
        return out.reshape(lead + (L, d))

    def backward(self, grad):
        q3, k3, v3, probs, shape = self.saved
        g3 = np.ascontiguousarray(grad.reshape(q3.shape))
        dq, dk, dv = kernels.attention_backward(q3, k3, v3, probs, g3, self.causal)
        return dq.reshape(shape), dk.reshape(shape), dv.reshape(shape)


# public functional surface

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def ewise(op: str, a: Tensor, b: Tensor) -> Tensor:
    if op == "add":
        return Add.apply(a, b)
    if op == "mul":
        return Mul.apply(a, b)
    raise ContractError(f"unknown elementwise op {op!r}; expected 'add' or 'mul'")


def scale(a: Tensor, factor: float) -> Tensor:
    return Scale.apply(a, factor=float(factor))


def tsum(a: Tensor) -> Tensor:
    return Sum.apply(a)


def mean(a: Tensor) -> Tensor:
    return scale(Sum.apply(a), 1.0 / a.data.size)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return SwapAxes.apply(a, axes=(ax1, ax2))


def transpose(a: Tensor) -> Tensor:
    return SwapAxes.apply(a, axes=(-1, -2))


def softmax_rows(a: Tensor) -> Tensor:
    return SoftmaxRows.apply(a)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def gelu(x: Tensor) -> Tensor:
    return GELU.apply(x)


def embedding(table: Tensor, ids) -> Tensor:
    return Embedding.apply(table, ids=ids)


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    return CrossEntropy.apply(logits, targets=targets, weights=weights)


def attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
    return Attention.apply(q, k, v, causal=causal)


def head_embed(m: Tensor, e: Tensor, mode: str) -> Tensor:
    return HeadEmbed.apply(m, e, mode=mode)


def split_heads(x: Tensor, n: int) -> Tensor:
    """(B, L, n*d) -> (B, n, L, d); head i takes columns [i*d, (i+1)*d)."""
    B, L, width = x.shape
    if width % n:
        raise DimensionError(f"width {width} not divisible into {n} heads")
    return swapaxes(reshape(x, (B, L, n, width // n)), 1, 2)


def merge_heads(x: Tensor) -> Tensor:
    """(B, n, L, d) -> (B, L, n*d), inverse of :func:`split_heads`."""
    B, n, L, d = x.shape
    return reshape(swapaxes(x, 1, 2), (B, L, n * d))


def expand_heads(x: Tensor, n: int) -> Tensor:
    return ExpandHeads.apply(x, n=n)


# graph traversal

class ComputeGraph:
    """Topologically ordered record of the functions reachable from a root."""

    def __init__(self, nodes: list[Function]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputeGraph":
        order: list[Function] = []
        seen: set[int] = set()
        stack: list[tuple[Function, bool]] = []
        if root._ctx is not None:
            stack.append((root._ctx, False))
        while stack:
            fn, expanded = stack.pop()
            if expanded:
                order.append(fn)
                continue
            if id(fn) in seen:
                continue
            seen.add(id(fn))
            stack.append((fn, True))
            for t in fn.inputs:
                if t._ctx is not None and id(t._ctx) not in seen:
                    stack.append((t._ctx, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, graph: ComputeGraph | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._ctx is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    if graph is None:
        graph = ComputeGraph.from_root(loss)
    # each function has exactly one output, so its id keys that output's gradient
    pending: dict[int, np.ndarray] = {id(loss._ctx): np.ones_like(loss.data)}
    for fn in reversed(graph.nodes):
        out_grad = pending.pop(id(fn), None)
        if out_grad is None:
            continue
        for t, g in zip(fn.inputs, fn.backward(out_grad)):
            if g is None or not t.requires_grad:
                continue
            if t._ctx is not None:
                key = id(t._ctx)
                pending[key] = pending[key] + g if key in pending else g
            else:
                t.grad = g.copy() if t.grad is None else t.grad + g
