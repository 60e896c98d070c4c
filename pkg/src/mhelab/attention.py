"""Seven attention mechanisms behind one parameter/forward interface.

Every variant maps hidden states ``X`` of width ``d_m = n * d_h`` to per-head
queries, keys and values of shape ``(B, n, L, d_h)``, runs scaled-dot
attention per head, concatenates the heads and applies ``W^O``. Variants
differ only in how the per-head Q/K/V are produced:

========  ==========================================================
SHA       one shared Q/K/V projection, one head replicated n times
MHA       independent Q/K/V projection per head
EL_ATT    per-head Q; K and V are the head's column slice of X
MQA       per-head Q; one K and one V projection shared by all heads
SKV       per-head Q; per-head projection shared between K and V
MHE_ADD   shared "seed" Q/K/V plus a per-head additive embedding
MHE_MUL   shared "seed" Q/K/V scaled by (1 + per-head embedding)
========  ==========================================================

Projections have no bias; parameter counts match the accounting module.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

INIT_STD = 0.02


class AttentionVariant(str, enum.Enum):
    SHA = "SHA"
    MHA = "MHA"
    EL_ATT = "EL_ATT"
    MQA = "MQA"
    SKV = "SKV"
    MHE_ADD = "MHE_ADD"
    MHE_MUL = "MHE_MUL"

    @classmethod
    def parse(cls, name: "str | AttentionVariant") -> "AttentionVariant":
        """Accept tags in any case with ``-`` or ``_`` separators (``mhe-mul``)."""
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "_")
        if key == "ELATT":
            key = "EL_ATT"
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(v.cli_name for v in cls)
            raise ContractError(f"unknown attention variant {name!r}; valid: {valid}") from None

    @property
    def cli_name(self) -> str:
        return self.value.lower().replace("_", "-")

    @property
    def is_mhe(self) -> bool:
        return self in (AttentionVariant.MHE_ADD, AttentionVariant.MHE_MUL)


ALL_VARIANTS = tuple(AttentionVariant)


def weight_shapes(variant: AttentionVariant, n: int, d_h: int) -> dict[str, tuple[int, ...]]:
    """Names and shapes of the learnable tensors of one attention sublayer.

    Per-head matrices ``W_i`` are stored side by side as the column blocks
    ``[:, i*d_h:(i+1)*d_h]`` of a single ``(d_m, n*d_h)`` array.
    """
    variant = AttentionVariant.parse(variant)
    d_m = n * d_h
    single = (d_m, d_h)
    per_head = (d_m, n * d_h)
    if variant is AttentionVariant.MHA:
        shapes = {"wq": per_head, "wk": per_head, "wv": per_head}
    elif variant is AttentionVariant.SHA:
        shapes = {"wq": single, "wk": single, "wv": single}
    elif variant is AttentionVariant.EL_ATT:
        shapes = {"wq": per_head}
    elif variant is AttentionVariant.MQA:
        shapes = {"wq": per_head, "wk": single, "wv": single}
    elif variant is AttentionVariant.SKV:
        shapes = {"wq": per_head, "wkv": per_head}
    else:
        shapes = {"wq": single, "wk": single, "wv": single,
                  "eq": (n, d_h), "ek": (n, d_h), "ev": (n, d_h)}
    shapes["wo"] = (d_m, d_m)
    return shapes


@dataclass
class AttentionLayerParams:
    variant: AttentionVariant
    n_heads: int
    head_dim: int
    weights: dict[str, Tensor] = field(default_factory=dict)

    @property
    def model_dim(self) -> int:
        return self.n_heads * self.head_dim

    def count(self) -> int:
        """Number of learnable scalars."""
        return sum(t.data.size for t in self.weights.values())

    def tensors(self) -> list[Tensor]:
        return list(self.weights.values())

    def head_block(self, name: str, i: int) -> np.ndarray:
        """Column block of head ``i`` from a stacked per-head matrix."""
        w = self.weights[name].data
        return w[:, i * self.head_dim:(i + 1) * self.head_dim]


def init_params(variant, n: int, d_h: int, seed: int = 0, dtype=np.float64,
                rng: np.random.Generator | None = None) -> AttentionLayerParams:
    """Draw every weight and head embedding from Normal(0, 0.02**2)."""
    if n < 1 or d_h < 1:
        raise ContractError(f"need n >= 1 and d_h >= 1, got n={n}, d_h={d_h}")
    variant = AttentionVariant.parse(variant)
    rng = np.random.default_rng(seed) if rng is None else rng
    weights = {
        name: Tensor(rng.normal(0.0, INIT_STD, size=shape).astype(dtype), requires_grad=True)
        for name, shape in weight_shapes(variant, n, d_h).items()
    }
    return AttentionLayerParams(variant, n, d_h, weights)


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, causal: bool = False) -> Tensor:
    """softmax(Q K^T / sqrt(d_h)) V, with positions s > t masked when causal."""
    if Q.ndim < 2:
        raise DimensionError(f"attention needs (L, d_h) operands, got {Q.shape}")
    return T.attention(Q, K, V, causal=causal)


def apply_head_embedding(variant, M: Tensor, e: Tensor) -> Tensor:
    """Modify one head's projection ``M`` (L, d_h) with its embedding ``e`` (d_h,)."""
    variant = AttentionVariant.parse(variant)
    if e.shape != (M.shape[-1],):
        raise DimensionError(f"head embedding {e.shape} does not match projection width {M.shape[-1]}")
    if variant is AttentionVariant.MHE_ADD:
        return T.add(M, e)
    if variant is AttentionVariant.MHE_MUL:
        return T.mul(M, T.add(e, Tensor(np.ones(e.shape, dtype=e.dtype))))
    raise ContractError(f"{variant.value} has no head embeddings")


def _project_heads(x: Tensor, w: Tensor, n: int) -> Tensor:
    return T.split_heads(T.matmul(x, w), n)


def _single_head(x: Tensor, w: Tensor) -> Tensor:
    return T.split_heads(T.matmul(x, w), 1)


def project_qkv(params: AttentionLayerParams, X: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Per-head (B, h, L, d_h) queries, keys and values; h is 1 for SHA."""
    v = params.variant
    w = params.weights
    n = params.n_heads
    if v is AttentionVariant.MHA:
        return (_project_heads(X, w["wq"], n), _project_heads(X, w["wk"], n),
                _project_heads(X, w["wv"], n))
    if v is AttentionVariant.SHA:
        return _single_head(X, w["wq"]), _single_head(X, w["wk"]), _single_head(X, w["wv"])
    if v is AttentionVariant.EL_ATT:
        kv = T.split_heads(X, n)
        return _project_heads(X, w["wq"], n), kv, kv
    if v is AttentionVariant.MQA:
        return (_project_heads(X, w["wq"], n), T.expand_heads(_single_head(X, w["wk"]), n),
                T.expand_heads(_single_head(X, w["wv"]), n))
    if v is AttentionVariant.SKV:
        kv = _project_heads(X, w["wkv"], n)
        return _project_heads(X, w["wq"], n), kv, kv
    mode = "add" if v is AttentionVariant.MHE_ADD else "mul"
    return tuple(
        T.head_embed(T.matmul(X, w["w" + c]), w["e" + c], mode) for c in "qkv"
    )


def _as_batch(X: Tensor, d_m: int) -> tuple[Tensor, bool]:
    if X.shape[-1] != d_m:
        raise DimensionError(f"input width {X.shape[-1]} != model dim {d_m}")
    if X.ndim == 2:
        return T.reshape(X, (1,) + X.shape), True
    if X.ndim != 3:
        raise DimensionError(f"expected (L, d_m) or (B, L, d_m) input, got {X.shape}")
    return X, False


def head_outputs(params: AttentionLayerParams, X: Tensor, causal: bool = False) -> Tensor:
    """Per-head attention outputs H_i as (B, n, L, d_h), before concatenation."""
    Xb, _ = _as_batch(X, params.model_dim)
    q, k, v = project_qkv(params, Xb)
    heads = T.attention(q, k, v, causal=causal)
    if params.variant is AttentionVariant.SHA:
        heads = T.expand_heads(heads, params.n_heads)
    return heads


def attention_forward(params: AttentionLayerParams, X: Tensor, causal: bool = False) -> Tensor:
    """Full attention sublayer: heads, concatenation, output projection."""
    Xb, squeeze = _as_batch(X, params.model_dim)
    out = T.matmul(T.merge_heads(head_outputs(params, Xb, causal)), params.weights["wo"])
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out
