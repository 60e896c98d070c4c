"""Tiny pre-norm transformers (encoder-only or decoder-only) over any attention variant."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from . import tensor as T
from .attention import AttentionLayerParams, AttentionVariant, attention_forward, init_params
from .errors import ConfigError
from .tensor import Tensor

ARCHS = ("encoder_only", "decoder_only")
PRECISIONS = {"fp32": np.float32, "fp64": np.float64}
WEIGHT_INIT_STD = 0.02
# positions start larger than tokens so they survive the first layernorm
POS_INIT_STD = 0.1


@dataclass
class ModelConfig:
    arch: str = "decoder_only"
    n_layers: int = 2
    n_heads: int = 4
    head_dim: int = 8
    model_dim: int | None = None
    ffn_dim: int | None = None
    vocab_size: int = 16
    max_seq_len: int = 32
    variant: AttentionVariant = AttentionVariant.MHA
    dropout: float = 0.0
    seed: int = 0
    precision: str = "fp32"

    def __post_init__(self):
        self.variant = AttentionVariant.parse(self.variant)
        if self.model_dim is None:
            self.model_dim = self.n_heads * self.head_dim
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.model_dim
        self.validate()

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        for name in ("n_layers", "n_heads", "head_dim", "ffn_dim", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.model_dim != self.n_heads * self.head_dim:
            raise ConfigError(
                f"model_dim {self.model_dim} != n_heads * head_dim = {self.n_heads * self.head_dim}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def causal(self) -> bool:
        return self.arch == "decoder_only"

    def to_items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append((f.name, v.value if isinstance(v, AttentionVariant) else str(v)))
        return out

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        unknown = set(items) - set(kinds)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kw = {}
        for k, v in items.items():
            if k in ("arch", "precision", "variant"):
                kw[k] = v
            elif k == "dropout":
                kw[k] = float(v)
            else:
                kw[k] = int(v)
        return cls(**kw)


class Model:
    """Token + learned position embeddings, N pre-norm blocks, tied LM head."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params
        self.training = True
        self._dropout_rng = np.random.default_rng(cfg.seed + 1)
        self.attn = [self._attention_view(i) for i in range(cfg.n_layers)]

    def _attention_view(self, i: int) -> AttentionLayerParams:
        prefix = f"layers.{i}.attn."
        weights = {k[len(prefix):]: t for k, t in self.params.items() if k.startswith(prefix)}
        return AttentionLayerParams(self.cfg.variant, self.cfg.n_heads, self.cfg.head_dim, weights)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def attention_qkv_params(self) -> int:
        """Learnable attention scalars excluding the output projections."""
        return sum(p.count() - p.weights["wo"].data.size for p in self.attn)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def _dropout(self, x: Tensor) -> Tensor:
        p = self.cfg.dropout
        if not self.training or p == 0.0:
            return x
        keep = (self._dropout_rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
        return T.mul(x, Tensor(keep))

    def forward(self, tokens, causal: bool | None = None) -> Tensor:
        """Logits (B, L, vocab) for integer tokens of shape (B, L) or (L,)."""
        ids = np.asarray(tokens, dtype=np.int64)
        squeeze = ids.ndim == 1
        if squeeze:
            ids = ids[None]
        B, L = ids.shape
        if L > self.cfg.max_seq_len:
            raise ConfigError(f"sequence length {L} exceeds max_seq_len {self.cfg.max_seq_len}")
        causal = self.cfg.causal if causal is None else causal
        P = self.params
        pos = T.embedding(P["pos_emb"], np.arange(L))
        x = T.add(T.embedding(P["tok_emb"], ids), pos)
        x = self._dropout(x)
        for i, attn in enumerate(self.attn):
            pre = f"layers.{i}."
            h = T.layer_norm(x, P[pre + "ln1.gamma"], P[pre + "ln1.beta"])
            x = T.add(x, self._dropout(attention_forward(attn, h, causal=causal)))
            h = T.layer_norm(x, P[pre + "ln2.gamma"], P[pre + "ln2.beta"])
            h = T.gelu(T.add(T.matmul(h, P[pre + "ffn.w1"]), P[pre + "ffn.b1"]))
            h = T.add(T.matmul(h, P[pre + "ffn.w2"]), P[pre + "ffn.b2"])
            x = T.add(x, self._dropout(h))
        x = T.layer_norm(x, P["ln_f.gamma"], P["ln_f.beta"])
        logits = T.matmul(x, T.transpose(P["tok_emb"]))
        if squeeze:
            logits = T.reshape(logits, logits.shape[1:])
        return logits

    __call__ = forward

    def logits(self, tokens, causal: bool | None = None) -> np.ndarray:
        """Inference-only forward returning a plain array."""
        was = self.training
        self.training = False
        try:
            with T.no_grad():
                return self.forward(tokens, causal).data
        finally:
            self.training = was


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    from .attention import weight_shapes

    d, f = cfg.model_dim, cfg.ffn_dim
    shapes = {"tok_emb": (cfg.vocab_size, d), "pos_emb": (cfg.max_seq_len, d)}
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        shapes[pre + "ln1.gamma"] = (d,)
        shapes[pre + "ln1.beta"] = (d,)
        for name, shape in weight_shapes(cfg.variant, cfg.n_heads, cfg.head_dim).items():
            shapes[pre + "attn." + name] = shape
        shapes[pre + "ln2.gamma"] = (d,)
        shapes[pre + "ln2.beta"] = (d,)
        shapes[pre + "ffn.w1"] = (d, f)
        shapes[pre + "ffn.b1"] = (f,)
        shapes[pre + "ffn.w2"] = (f, d)
        shapes[pre + "ffn.b2"] = (d,)
    shapes["ln_f.gamma"] = (d,)
    shapes["ln_f.beta"] = (d,)
    return shapes


def build_model(cfg: ModelConfig) -> Model:
    """Fresh model; weights ~ Normal(0, 0.02**2) except positions at 0.1, norms at identity, biases zero."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.dtype
    params: dict[str, Tensor] = {}

    def normal(shape, std=WEIGHT_INIT_STD):
        return Tensor(rng.normal(0.0, std, size=shape).astype(dt), requires_grad=True)

    def const(shape, value):
        return Tensor(np.full(shape, value, dtype=dt), requires_grad=True)

    params["tok_emb"] = normal((cfg.vocab_size, cfg.model_dim))
    params["pos_emb"] = normal((cfg.max_seq_len, cfg.model_dim), POS_INIT_STD)
    d, f = cfg.model_dim, cfg.ffn_dim
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        params[pre + "ln1.gamma"] = const((d,), 1.0)
        params[pre + "ln1.beta"] = const((d,), 0.0)
        attn = init_params(cfg.variant, cfg.n_heads, cfg.head_dim, dtype=dt, rng=rng)
        for name, t in attn.weights.items():
            params[pre + "attn." + name] = t
        params[pre + "ln2.gamma"] = const((d,), 1.0)
        params[pre + "ln2.beta"] = const((d,), 0.0)
        params[pre + "ffn.w1"] = normal((d, f))
        params[pre + "ffn.b1"] = const((f,), 0.0)
        params[pre + "ffn.w2"] = normal((f, d))
        params[pre + "ffn.b2"] = const((d,), 0.0)
    params["ln_f.gamma"] = const((d,), 1.0)
    params["ln_f.beta"] = const((d,), 0.0)
    assert list(params) == list(parameter_shapes(cfg))
    return Model(cfg, params)
