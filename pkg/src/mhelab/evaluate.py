"""Sliding-window perplexity for causal models."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .model import Model


# wider than float64 on x86-64 and most Linux targets; lets a uniform model
# score exactly ``vocab`` instead of one ulp off
_ACC = np.longdouble


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(_ACC)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def window_plan(n_tokens: int, stride: int, window: int) -> list[tuple[int, int, int]]:
    """``(begin, end, first_new)`` per window over target positions 1..n-1.

    Window inputs are ``tokens[begin:end]`` predicting positions
    ``begin+1 .. end``; only positions ``>= first_new`` are scored there.
    """
    if n_tokens < 2:
        raise ContractError("perplexity needs at least 2 tokens")
    if stride < 1 or window < 1:
        raise ContractError(f"stride and window must be >= 1, got {stride}, {window}")
    if stride > window:
        raise ContractError(f"stride {stride} > window {window} would leave tokens unscored")
    plan = []
    covered = 0  # highest target position scored so far
    begin = 0
    while covered < n_tokens - 1:
        end = min(begin + window, n_tokens - 1)
        plan.append((begin, end, covered + 1))
        covered = end
        begin += stride
    return plan


def _token_nlls(model: Model, tokens, stride: int, window: int | None) -> np.ndarray:
    if not model.cfg.causal:
        raise ContractError("strided perplexity needs a decoder-only model")
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    window = model.cfg.max_seq_len if window is None else window
    if window > model.cfg.max_seq_len:
        raise ContractError(f"window {window} exceeds max_seq_len {model.cfg.max_seq_len}")
    out = np.empty(max(ids.size - 1, 0), dtype=_ACC)
    for begin, end, first in window_plan(ids.size, stride, window):
        logp = _log_softmax(model.logits(ids[begin:end][None], causal=True)[0])
        targets = ids[begin + 1:end + 1]
        nll = -logp[np.arange(targets.size), targets]
        skip = first - (begin + 1)
        out[first - 1:end] = nll[skip:]
    return out


def token_nlls(model: Model, tokens, stride: int = 256, window: int | None = None) -> np.ndarray:
    """Per-token negative log-likelihoods (nats) in target order, positions 1..n-1."""
    return _token_nlls(model, tokens, stride, window).astype(np.float64)


def evaluate_perplexity(model: Model, tokens, stride: int = 256, window: int | None = None) -> float:
    """exp of the mean NLL over every scored position."""
    nll = _token_nlls(model, tokens, stride, window)
    return float(np.exp(nll.sum() / nll.size))
