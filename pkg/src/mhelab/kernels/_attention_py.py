"""Numpy reference implementation of the fused attention kernel."""

import numpy as np

MASK_VALUE = -1e30


def _causal_mask(L, dtype):
    return np.triu(np.full((L, L), MASK_VALUE, dtype=dtype), k=1)


def attention_forward(q, k, v, causal):
    """softmax(q k^T / sqrt(d) [+ causal mask]) v over a stack of (L, d) blocks.

    Returns the output and the attention probabilities (kept for backward).
    """
    d = q.shape[-1]
    scores = (q @ np.swapaxes(k, -1, -2)) * q.dtype.type(1.0 / np.sqrt(d))
    if causal:
        scores += _causal_mask(q.shape[-2], q.dtype)
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs @ v, probs


def attention_backward(q, k, v, probs, dout, causal=False):
    d = q.shape[-1]
    c = q.dtype.type(1.0 / np.sqrt(d))
    dv = np.swapaxes(probs, -1, -2) @ dout
    dprobs = dout @ np.swapaxes(v, -1, -2)
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores *= c
    dq = dscores @ k
    dk = np.swapaxes(dscores, -1, -2) @ q
    return dq, dk, dv
