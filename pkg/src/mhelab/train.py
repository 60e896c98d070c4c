"""AdamW training for the tiny transformers, with synthetic and byte-level data."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, TrainingDivergedError
from .model import Model
from .tensor import Tensor

log = logging.getLogger(__name__)

# byte-level tokenizer: 256 byte values plus four specials
PAD, BOS, EOS, MASK = 256, 257, 258, 259
BYTE_VOCAB = 260


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 3e-4
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_steps: int = 100
    schedule: str = "linear"
    objective: str = "clm"
    mlm_mask_prob: float = 0.15
    mask_token_id: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.adam_eps <= 0 or self.lr <= 0:
            raise ConfigError("lr and eps must be positive")
        if self.steps < 0 or self.batch_size < 1 or self.warmup_steps < 0:
            raise ConfigError("steps >= 0, batch_size >= 1, warmup_steps >= 0 required")
        if self.schedule not in ("linear", "constant"):
            raise ConfigError(f"schedule must be 'linear' or 'constant', got {self.schedule!r}")
        if self.objective not in ("mlm", "clm"):
            raise ConfigError(f"objective must be 'mlm' or 'clm', got {self.objective!r}")
        if not 0 < self.mlm_mask_prob <= 1:
            raise ConfigError("mlm_mask_prob must lie in (0, 1]")


def lr_at(step: int, tcfg: TrainConfig) -> float:
    """Learning rate for 1-based ``step``: linear warmup, then linear decay or flat."""
    if tcfg.warmup_steps and step <= tcfg.warmup_steps:
        return tcfg.lr * step / tcfg.warmup_steps
    if tcfg.schedule == "constant":
        return tcfg.lr
    remaining = max(tcfg.steps - tcfg.warmup_steps, 1)
    return tcfg.lr * max(tcfg.steps - step + 1, 0) / remaining


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: list[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adamw_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState,
               tcfg: TrainConfig, step: int, decay: list[bool] | None = None) -> float:
    """One in-place AdamW update; returns the learning rate used.

    Weight decay is decoupled (applied to the weights, not the gradient) and
    only to parameters whose ``decay`` flag is set (default: all).
    """
    if step < 1:
        raise ContractError("step counts from 1")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("params, grads and optimizer state differ in length")
    lr = lr_at(step, tcfg)
    b1, b2, eps, wd = tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps, tcfg.weight_decay
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.data.shape or state.m[i].shape != p.data.shape:
            raise DimensionError(f"gradient {g.shape} / state {state.m[i].shape} vs param {p.data.shape}")
        dt = p.data.dtype.type
        if wd and (decay is None or decay[i]):
            p.data *= dt(1.0 - lr * wd)
        m, v = state.m[i], state.v[i]
        m *= dt(b1)
        m += dt(1.0 - b1) * g
        v *= dt(b2)
        v += dt(1.0 - b2) * g * g
        p.data -= dt(lr) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(eps))
    return lr


@dataclass
class Batch:
    """Token rows; ``loss_mask`` marks positions whose token is scored."""

    tokens: np.ndarray
    loss_mask: np.ndarray | None = None


class BatchSource(Protocol):
    def next_batch(self, batch_size: int) -> Batch: ...


class CopyTask:
    """Random prefix followed by an exact copy; only the copy is scored."""

    def __init__(self, vocab: int = 16, prefix_len: int = 16, seed: int = 0):
        if vocab < 2 or prefix_len < 1:
            raise ContractError("copy task needs vocab >= 2 and prefix_len >= 1")
        self.vocab = vocab
        self.prefix_len = prefix_len
        self.rng = np.random.default_rng(seed)

    @property
    def seq_len(self) -> int:
        return 2 * self.prefix_len

    def next_batch(self, batch_size: int) -> Batch:
        prefix = self.rng.integers(0, self.vocab, size=(batch_size, self.prefix_len))
        tokens = np.concatenate([prefix, prefix], axis=1)
        mask = np.zeros(tokens.shape, dtype=bool)
        mask[:, self.prefix_len:] = True
        return Batch(tokens, mask)


class TokenStream:
    """Consecutive windows of a token sequence, wrapping around at the end."""

    def __init__(self, tokens, seq_len: int):
        self.tokens = np.asarray(tokens, dtype=np.int64)
        if self.tokens.size < 2:
            raise ContractError("token stream needs at least 2 tokens")
        self.seq_len = seq_len
        self.pos = 0

    def next_batch(self, batch_size: int) -> Batch:
        need = batch_size * self.seq_len
        idx = (self.pos + np.arange(need)) % self.tokens.size
        self.pos = int((self.pos + need) % self.tokens.size)
        return Batch(self.tokens[idx].reshape(batch_size, self.seq_len))


def encode_bytes(text: bytes | str) -> np.ndarray:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return np.frombuffer(text, dtype=np.uint8).astype(np.int64)


def mlm_corrupt(tokens: np.ndarray, vocab: int, mask_id: int, prob: float,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Select ``prob`` of positions; replace 80% with [MASK], 10% random, keep 10%."""
    chosen = rng.random(tokens.shape) < prob
    if not chosen.any():
        chosen.flat[rng.integers(tokens.size)] = True
    roll = rng.random(tokens.shape)
    corrupted = tokens.copy()
    corrupted[chosen & (roll < 0.8)] = mask_id
    rand = chosen & (roll >= 0.8) & (roll < 0.9)
    corrupted[rand] = rng.integers(0, vocab, size=int(rand.sum()))
    return corrupted, chosen


def batch_loss(model: Model, batch: Batch, tcfg: TrainConfig,
               rng: np.random.Generator | None = None) -> Tensor:
    """Mean cross-entropy in nats under the configured objective."""
    tokens = np.asarray(batch.tokens, dtype=np.int64)
    if tcfg.objective == "clm":
        inputs, targets = tokens[:, :-1], tokens[:, 1:]
        weights = None if batch.loss_mask is None else batch.loss_mask[:, 1:].astype(float)
        logits = model.forward(inputs, causal=True)
        return T.cross_entropy(logits, targets, weights)
    rng = np.random.default_rng(tcfg.seed) if rng is None else rng
    mask_id = model.cfg.vocab_size - 1 if tcfg.mask_token_id is None else tcfg.mask_token_id
    corrupted, chosen = mlm_corrupt(tokens, model.cfg.vocab_size, mask_id, tcfg.mlm_mask_prob, rng)
    logits = model.forward(corrupted, causal=False)
    return T.cross_entropy(logits, tokens, chosen.astype(float))


@dataclass
class TrainReport:
    loss_curve: list[tuple[int, float]] = field(default_factory=list)
    final_loss: float = math.nan
    initial_loss: float = math.nan
    tokens_seen: int = 0
    wall_time: float = 0.0


def _decay_flags(model: Model) -> list[bool]:
    return [t.data.ndim >= 2 for t in model.parameters()]


def train(model: Model, data: BatchSource | Iterable[int] | np.ndarray, tcfg: TrainConfig,
          log_every: int = 0) -> TrainReport:
    """Run ``tcfg.steps`` AdamW steps; each recorded loss precedes its update."""
    if not hasattr(data, "next_batch"):
        data = TokenStream(np.asarray(list(data) if not isinstance(data, np.ndarray) else data),
                           model.cfg.max_seq_len)
    rng = np.random.default_rng(tcfg.seed)
    params = model.parameters()
    state = AdamState.zeros_like(params)
    decay = _decay_flags(model)
    report = TrainReport()
    start = time.perf_counter()
    model.training = True
    for step in range(1, tcfg.steps + 1):
        batch = data.next_batch(tcfg.batch_size)
        model.zero_grad()
        loss = batch_loss(model, batch, tcfg, rng)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss {value} at step {step}, lr {lr_at(step, tcfg):.3g}")
        loss.backward()
        grads = [p.grad for p in params]
        bad = [n for (n, p) in model.named_parameters() if p.grad is not None and not np.isfinite(p.grad).all()]
        if bad:
            norms = {n: float(np.linalg.norm(p.grad)) for n, p in model.named_parameters() if p.grad is not None}
            raise TrainingDivergedError(
                f"non-finite gradients in {bad} at step {step}, lr {lr_at(step, tcfg):.3g}, norms {norms}")
        adamw_step(params, grads, state, tcfg, step, decay)
        report.loss_curve.append((step, value))
        report.tokens_seen += int(np.asarray(batch.tokens).size)
        if log_every and step % log_every == 0:
            log.info("step %d loss %.4f lr %.3g", step, value, lr_at(step, tcfg))
    model.zero_grad()
    if report.loss_curve:
        report.initial_loss = report.loss_curve[0][1]
        report.final_loss = report.loss_curve[-1][1]
    report.wall_time = time.perf_counter() - start
    return report


def moving_average(values, window: int = 100) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size < window:
        return np.array([v.mean()]) if v.size else v
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window
