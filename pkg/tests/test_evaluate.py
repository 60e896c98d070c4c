import math

import numpy as np
import pytest

from mhelab.errors import ContractError
from mhelab.evaluate import evaluate_perplexity, token_nlls, window_plan
from mhelab.model import ModelConfig, build_model


def _model(window, vocab=17, seed=0, variant="mhe_mul"):
    m = build_model(ModelConfig(variant=variant, n_layers=2, n_heads=2, head_dim=4, vocab_size=vocab,
                                max_seq_len=window, precision="fp64", seed=seed))
    rng = np.random.default_rng(seed + 100)
    for p in m.parameters():
        p.data += rng.normal(0, 0.2, size=p.shape)
    return m


def rescan_oracle(model, tokens, stride, window):
    """Score target p from the first window that reaches it, re-running the model on just its own prefix."""
    nll = []
    for p in range(1, len(tokens)):
        k = max(0, math.ceil((p - window) / stride))
        ctx = tokens[k * stride:p]
        assert 1 <= len(ctx) <= window
        z = model.logits(np.asarray(ctx)[None])[0, -1].astype(np.float64)
        z = z - z.max()
        nll.append(-(z[tokens[p]] - math.log(np.exp(z).sum())))
    return np.array(nll)


def test_uniform_model_perplexity_equals_vocab():
    m = build_model(ModelConfig(vocab_size=23, max_seq_len=8, precision="fp64"))
    for p in m.parameters():
        p.data[...] = 0.0
    toks = np.random.default_rng(0).integers(0, 23, size=50)
    assert evaluate_perplexity(m, toks, stride=3, window=8) == pytest.approx(23.0, rel=1e-12)


def test_stride_equals_window_counts_each_token_once():
    plan = window_plan(37, 8, 8)
    scored = [p for b, e, f in plan for p in range(f, e + 1)]
    assert scored == list(range(1, 37))
    assert all(f == b + 1 for b, e, f in plan)


@pytest.mark.parametrize("n,s,w", [(2, 1, 1), (10, 3, 5), (100, 7, 7), (1000, 4, 8), (9, 1, 8)])
def test_plan_covers_every_target_once(n, s, w):
    scored = [p for b, e, f in window_plan(n, s, w) for p in range(f, e + 1)]
    assert scored == list(range(1, n))


def test_matches_rescan_oracle_on_1k_tokens():
    m = _model(8)
    toks = np.random.default_rng(3).integers(0, 17, size=1000)
    got = token_nlls(m, toks, stride=4, window=8)
    want = rescan_oracle(m, toks, 4, 8)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)
    assert evaluate_perplexity(m, toks, 4, 8) == pytest.approx(math.exp(want.mean()), abs=1e-9)


def test_stride_equals_window_matches_oracle():
    m = _model(6, variant="sha")
    toks = np.random.default_rng(4).integers(0, 17, size=61)
    np.testing.assert_allclose(token_nlls(m, toks, 6, 6), rescan_oracle(m, toks, 6, 6), atol=1e-9, rtol=0)


def test_rejects_bad_arguments():
    m = _model(8)
    with pytest.raises(ContractError):
        evaluate_perplexity(m, [1], 4, 8)
    with pytest.raises(ContractError):
        evaluate_perplexity(m, list(range(10)), 9, 8)
    with pytest.raises(ContractError):
        evaluate_perplexity(m, list(range(10)), 2, 9)
    enc = build_model(ModelConfig(arch="encoder_only"))
    with pytest.raises(ContractError):
        evaluate_perplexity(enc, list(range(10)), 2, 4)
