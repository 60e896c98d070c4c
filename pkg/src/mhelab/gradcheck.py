"""Central finite-difference checks for primitives and whole models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import ALL_VARIANTS, AttentionVariant
from .model import ModelConfig, build_model

H = 1e-5
RTOL = 1e-3
ATOL = 1e-6


@dataclass
class CheckResult:
    name: str
    max_abs_err: float
    max_rel_err: float
    checked: int
    ok: bool


def _compare(name: str, analytic: np.ndarray, numeric: np.ndarray, rtol: float, atol: float) -> CheckResult:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    err = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    ok = bool(np.all(err <= atol + rtol * scale))
    # relative error is only meaningful where the gradient clears the absolute floor
    big = scale > atol
    rel = float(np.max(err[big] / scale[big])) if big.any() else 0.0
    return CheckResult(name, float(err.max(initial=0.0)), rel, int(a.size), ok)


def numeric_grad(f: Callable[[], float], x: np.ndarray, index, h: float = H) -> float:
    """d f / d x[index] by central differences; ``x`` is perturbed in place and restored."""
    old = x[index]
    x[index] = old + h
    up = f()
    x[index] = old - h
    down = f()
    x[index] = old
    return (up - down) / (2 * h)


# ---- primitive ops -------------------------------------------------------

def _op_cases(rng: np.random.Generator) -> dict[str, tuple[type, list[np.ndarray], dict]]:
    r = lambda *s: rng.normal(size=s)
    ids = rng.integers(0, 4, size=(2, 3))
    return {
        "matmul": (T.MatMul, [r(2, 3, 4), r(4, 3)], {}),
        "add": (T.Add, [r(2, 3, 4), r(3, 4)], {}),
        "mul": (T.Mul, [r(2, 3, 4), r(4)], {}),
        "scale": (T.Scale, [r(3, 4)], {"factor": -1.7}),
        "sum": (T.Sum, [r(3, 4)], {}),
        "reshape": (T.Reshape, [r(2, 6)], {"shape": (3, 4)}),
        "swapaxes": (T.SwapAxes, [r(2, 3, 4)], {"axes": (0, 2)}),
        "expand_heads": (T.ExpandHeads, [r(2, 1, 3, 2)], {"n": 3}),
        "head_embed_add": (T.HeadEmbed, [r(2, 3, 4), r(3, 4)], {"mode": "add"}),
        "head_embed_mul": (T.HeadEmbed, [r(2, 3, 4), r(3, 4)], {"mode": "mul"}),
        "softmax_rows": (T.SoftmaxRows, [r(3, 4)], {}),
        "layer_norm": (T.LayerNorm, [r(2, 3, 4), 1 + 0.1 * r(4), r(4)], {}),
        "gelu": (T.GELU, [r(3, 4)], {}),
        "embedding": (T.Embedding, [r(4, 3)], {"ids": ids}),
        "cross_entropy": (T.CrossEntropy, [r(2, 3, 4)],
                          {"targets": ids, "weights": rng.random((2, 3)) + 0.1}),
        "attention": (T.Attention, [r(2, 4, 3), r(2, 4, 3), r(2, 4, 3)], {"causal": False}),
        "attention_causal": (T.Attention, [r(2, 4, 3), r(2, 4, 3), r(2, 4, 3)], {"causal": True}),
    }


OP_NAMES = tuple(_op_cases(np.random.default_rng(0)))


def check_op(name: str, seed: int = 0, rtol: float = RTOL, atol: float = ATOL) -> CheckResult:
    """Check one primitive's backward rule in isolation (no other ops involved)."""
    cls, arrays, kwargs = _op_cases(np.random.default_rng(seed))[name]
    w_rng = np.random.default_rng(seed + 1)
    fn = cls(*(T.Tensor(a) for a in arrays))
    out = fn.forward(*arrays, **kwargs)
    w = w_rng.normal(size=out.shape)
    grads = fn.backward(w.copy())

    def f():
        return float(np.sum(cls(*(T.Tensor(a) for a in arrays)).forward(*arrays, **kwargs) * w))

    analytic, numeric = [], []
    for x, g in zip(arrays, grads):
        for idx in np.ndindex(x.shape):
            analytic.append(g[idx])
            numeric.append(numeric_grad(f, x, idx))
    return _compare(name, np.array(analytic), np.array(numeric), rtol, atol)


def check_ops(seed: int = 0, names=OP_NAMES) -> list[CheckResult]:
    return [check_op(n, seed) for n in names]


# ---- whole model -----------------------------------------------------------

def gradcheck_model(variant, seed: int = 0, n_heads: int = 2, head_dim: int = 2, seq_len: int = 4,
                    vocab: int = 5, batch: int = 2, arch: str = "decoder_only",
                    samples: int | None = None, rtol: float = RTOL, atol: float = ATOL) -> list[CheckResult]:
    """One result per learnable tensor of a 1-layer fp64 model.

    ``samples`` limits the check to that many random scalar entries across
    all tensors; ``None`` checks every entry.
    """
    cfg = ModelConfig(arch=arch, n_layers=1, n_heads=n_heads, head_dim=head_dim, vocab_size=vocab,
                      max_seq_len=seq_len, variant=variant, seed=seed, precision="fp64")
    model = build_model(cfg)
    rng = np.random.default_rng(seed + 7)
    # spread weights beyond the tiny init so every path carries signal
    for t in model.parameters():
        t.data += rng.normal(0.0, 0.3, size=t.shape)
    tokens = rng.integers(0, vocab, size=(batch, seq_len))
    targets = rng.integers(0, vocab, size=(batch, seq_len))
    causal = cfg.causal

    def loss_value() -> float:
        with T.no_grad():
            return T.cross_entropy(model.forward(tokens, causal), targets).item()

    model.zero_grad()
    T.cross_entropy(model.forward(tokens, causal), targets).backward()
    named = list(model.named_parameters())
    entries = [(i, idx) for i, (_, t) in enumerate(named) for idx in np.ndindex(t.shape)]
    if samples is not None and samples < len(entries):
        pick = rng.choice(len(entries), size=samples, replace=False)
        entries = [entries[j] for j in sorted(pick)]
    per: dict[int, tuple[list, list]] = {}
    for i, idx in entries:
        t = named[i][1]
        a = 0.0 if t.grad is None else t.grad[idx]
        n = numeric_grad(loss_value, t.data, idx)
        per.setdefault(i, ([], []))
        per[i][0].append(a)
        per[i][1].append(n)
    model.zero_grad()
    return [_compare(named[i][0], np.array(a), np.array(n), rtol, atol) for i, (a, n) in per.items()]


def gradcheck_all(seed: int = 0, variants=ALL_VARIANTS, **kw) -> dict[AttentionVariant, list[CheckResult]]:
    return {AttentionVariant.parse(v): gradcheck_model(v, seed, **kw) for v in variants}
