"""Exact parameter counts and training-memory budgets for attention sublayers.

Two counting conventions are used:

``table4``
    Query/key/value projections (and head embeddings) only; the output
    projection that pools the heads is excluded.
``experiment``
    ``table4`` plus the ``d_m x d_m`` output projection, per attention
    sublayer, summed over the sublayers of a model.

All arithmetic is on Python ints; rounding exists only in :func:`format_count`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .attention import ALL_VARIANTS, AttentionVariant
from .errors import ContractError

V = AttentionVariant

CONVENTIONS = ("table4", "experiment")

# mixed-precision training bytes per parameter (fp16 copy + fp32 master, etc.)
WEIGHT_BYTES = 2 + 4
GRAD_BYTES = 2 + 4
ADAM_BYTES = 4 + 4
ACTIVATION_BYTES = 2

SWEEP_HEADER = (
    "variant", "layers", "heads", "head_dim", "qkv_params", "total_params",
    "weights_bytes", "grad_bytes", "adam_bytes", "act_bytes", "total_bytes", "saving_pct",
)


def _check_dims(n: int, d: int) -> None:
    if n < 1 or d < 1:
        raise ContractError(f"heads and head dim must be >= 1, got n={n}, d={d}")


def attention_params(variant, n: int, d: int) -> int:
    """Q/K/V parameters of one sublayer with ``n`` heads of width ``d`` (d_m = n*d)."""
    if n < 1 or d < 1:
        _check_dims(n, d)
    v = variant if type(variant) is AttentionVariant else AttentionVariant.parse(variant)
    d2 = d * d
    if v is V.SHA:
        return 3 * d2 * n
    if v is V.MHA:
        return 3 * d2 * n * n
    if v is V.EL_ATT:
        return d2 * n * n
    if v is V.MQA:
        return d2 * n * n + 2 * d2 * n
    if v is V.SKV:
        return 2 * d2 * n * n
    return 3 * d2 * n + 3 * d * n


def extra_over_sha(variant, n: int, d: int) -> int:
    """Signed parameter difference to SHA; negative for EL_ATT when n < 3."""
    v = AttentionVariant.parse(variant)
    d2 = d * d
    _check_dims(n, d)
    closed = {
        V.SHA: 0,
        V.MHA: (3 * n * n - 3 * n) * d2,
        V.EL_ATT: (n * n - 3 * n) * d2,
        V.MQA: (n * n - n) * d2,
        V.SKV: (2 * n * n - 3 * n) * d2,
        V.MHE_ADD: 3 * n * d,
        V.MHE_MUL: 3 * n * d,
    }
    return closed[v]


@dataclass(frozen=True)
class ParamFormula:
    variant: AttentionVariant

    def qkv_count(self, n: int, d: int) -> int:
        return attention_params(self.variant, n, d)

    def extra_over_sha(self, n: int, d: int) -> int:
        return extra_over_sha(self.variant, n, d)


def attention_sublayers(n_layers: int, arch: str = "encoder_only") -> int:
    """Attention sublayers in a stack of ``n_layers`` transformer layers.

    For ``encoder_decoder`` the layers split evenly into encoder and decoder
    halves, and each decoder layer carries a self- and a cross-attention
    sublayer.
    """
    if arch in ("encoder_only", "decoder_only"):
        return n_layers
    if arch == "encoder_decoder":
        if n_layers % 2:
            raise ContractError(f"encoder-decoder stack needs an even layer count, got {n_layers}")
        half = n_layers // 2
        return half + 2 * half
    raise ContractError(f"unknown architecture {arch!r}")


def sublayer_params(variant, n: int, d: int, convention: str = "experiment") -> int:
    if convention == "table4":
        return attention_params(variant, n, d)
    if convention == "experiment":
        return attention_params(variant, n, d) + (n * d) ** 2
    raise ContractError(f"unknown counting convention {convention!r}; expected one of {CONVENTIONS}")


def experiment_params(variant, n_layers: int, n: int, d: int, arch: str = "encoder_only") -> int:
    """Attention parameters of a whole model, output projections included."""
    return attention_sublayers(n_layers, arch) * sublayer_params(variant, n, d, "experiment")


def model_params(variant, n_layers: int, n: int, d: int, convention: str = "experiment",
                 arch: str = "encoder_only") -> int:
    return attention_sublayers(n_layers, arch) * sublayer_params(variant, n, d, convention)


@dataclass(frozen=True)
class MemoryBreakdown:
    weights: int
    gradients: int
    adam_states: int
    activations: int

    @property
    def total(self) -> int:
        return self.weights + self.gradients + self.adam_states + self.activations


def memory_usage(param_count: int, batch: int, seq: int, d_m: int) -> MemoryBreakdown:
    """Training memory in bytes under fp16 mixed precision with Adam."""
    if min(param_count, batch, seq, d_m) < 1:
        raise ContractError("memory_usage inputs must all be >= 1")
    return MemoryBreakdown(
        weights=param_count * WEIGHT_BYTES,
        gradients=param_count * GRAD_BYTES,
        adam_states=param_count * ADAM_BYTES,
        activations=batch * seq * d_m * ACTIVATION_BYTES,
    )


def saving_ratio(candidate_total_bytes: int, mha_total_bytes: int) -> float:
    """Percent of MHA memory saved; round to 2 decimals only for display."""
    if mha_total_bytes <= 0:
        raise ContractError("MHA reference must be positive")
    return 100.0 * (1.0 - candidate_total_bytes / mha_total_bytes)


@dataclass(frozen=True)
class BudgetReport:
    variant: AttentionVariant
    n_layers: int
    n_heads: int
    head_dim: int
    per_layer_qkv: int
    per_layer_total: int
    model_total: int
    bytes: MemoryBreakdown
    saving_ratio_vs_mha: float

    def csv_row(self) -> list:
        b = self.bytes
        return [self.variant.cli_name, self.n_layers, self.n_heads, self.head_dim,
                self.per_layer_qkv * self.n_layers, self.model_total,
                b.weights, b.gradients, b.adam_states, b.activations, b.total,
                f"{self.saving_ratio_vs_mha:.2f}"]


def budget_report(variant, n_layers: int = 1, n: int = 12, d: int = 64, batch: int = 32,
                  seq: int = 512, d_m: int | None = None) -> BudgetReport:
    """Parameter and byte budget of ``n_layers`` attention blocks.

    ``d_m`` only enters the activation term; it defaults to ``n * d``.
    """
    v = AttentionVariant.parse(variant)
    d_m = n * d if d_m is None else d_m
    qkv = attention_params(v, n, d)
    total = qkv + (n * d) ** 2
    mem = memory_usage(n_layers * total, batch, seq, d_m)
    ref = memory_usage(n_layers * ((n * d) ** 2 + attention_params(V.MHA, n, d)), batch, seq, d_m)
    return BudgetReport(v, n_layers, n, d, qkv, total, n_layers * total, mem,
                        saving_ratio(mem.total, ref.total))


def memory_table(n: int = 12, d: int = 64, batch: int = 32, seq: int = 512,
                 d_m: int = 768, variants: Sequence = ALL_VARIANTS) -> list[BudgetReport]:
    return [budget_report(v, 1, n, d, batch, seq, d_m) for v in variants]


@dataclass(frozen=True)
class SweepRow:
    variant: AttentionVariant
    layers: int
    heads: int
    head_dim: int
    qkv_params: int
    total_params: int


def scale_sweep(variants: Iterable, grid: Iterable[tuple[int, int]], d: int) -> list[SweepRow]:
    """One row per (variant, (layers, heads)); ``qkv_params`` is summed over layers."""
    if d < 1:
        raise ContractError("head dim must be >= 1")
    grid = list(grid)
    rows = []
    for v in variants:
        v = AttentionVariant.parse(v)
        for layers, heads in grid:
            qkv = layers * attention_params(v, heads, d)
            rows.append(SweepRow(v, layers, heads, d, qkv, qkv + layers * (heads * d) ** 2))
    return rows


def sweep_csv(rows: Iterable[SweepRow], batch: int = 32, seq: int = 512) -> str:
    """Render sweep rows with byte budgets in the fixed CSV schema."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        rep = budget_report(r.variant, r.layers, r.heads, r.head_dim, batch, seq)
        w.writerow(rep.csv_row())
    return buf.getvalue()


def format_count(x: int) -> str:
    """Thousands separators, plus an M/B suffix for values >= 1e6."""
    if abs(x) >= 10**9:
        return f"{x:,} ({x / 1e9:.2f}B)"
    if abs(x) >= 10**6:
        return f"{x:,} ({x / 1e6:.2f}M)"
    return f"{x:,}"


def as_dict(report: BudgetReport) -> dict:
    out = asdict(report)
    out["variant"] = report.variant.value
    out["bytes"]["total"] = report.bytes.total
    return out
