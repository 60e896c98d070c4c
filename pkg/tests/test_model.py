import math

import numpy as np
import pytest

from mhelab import tensor as T
from mhelab.attention import ALL_VARIANTS
from mhelab.errors import ConfigError
from mhelab.model import ModelConfig, build_model, parameter_shapes
from mhelab.train import Batch, TrainConfig, batch_loss


def test_qkv_param_examples():
    cfg = dict(arch="decoder_only", n_layers=2, n_heads=2, head_dim=8, vocab_size=16)
    assert build_model(ModelConfig(variant="mhe_mul", **cfg)).attention_qkv_params() == 864
    assert build_model(ModelConfig(variant="mha", **cfg)).attention_qkv_params() == 1536


@pytest.mark.parametrize("kw", [dict(model_dim=10), dict(vocab_size=1), dict(n_layers=0), dict(max_seq_len=0),
                                dict(arch="seq2seq"), dict(dropout=1.0), dict(precision="fp16")])
def test_config_invariants(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_config_roundtrip_items():
    cfg = ModelConfig(variant="skv", n_layers=3, dropout=0.1, precision="fp64")
    assert ModelConfig.from_items(dict(cfg.to_items())) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_items({"bogus": "1"})


def test_same_seed_same_initial_loss():
    batch = Batch(np.random.default_rng(0).integers(0, 16, size=(4, 12)))
    tcfg = TrainConfig()
    losses = [batch_loss(build_model(ModelConfig(seed=3)), batch, tcfg).item() for _ in range(2)]
    assert losses[0] == losses[1]


def test_shapes_and_tied_head():
    cfg = ModelConfig(variant="mqa", vocab_size=11, max_seq_len=9)
    m = build_model(cfg)
    assert {k: v.shape for k, v in m.named_parameters()} == parameter_shapes(cfg)
    assert m.forward(np.zeros((2, 9), dtype=int)).shape == (2, 9, 11)
    assert m.forward(np.zeros(5, dtype=int)).shape == (5, 11)
    assert "lm_head" not in dict(m.named_parameters())
    with pytest.raises(ConfigError):
        m.forward(np.zeros((1, 10), dtype=int))


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_causal_lm_no_leakage(variant):
    cfg = ModelConfig(variant=variant, n_layers=2, n_heads=2, head_dim=4, vocab_size=13, max_seq_len=10,
                      precision="fp64", seed=2)
    m = build_model(cfg)
    rng = np.random.default_rng(5)
    for p in m.parameters():
        p.data += rng.normal(0, 0.2, size=p.shape)
    toks = rng.integers(0, 13, size=(1, 10))
    base = m.logits(toks)
    for t in range(9):
        other = toks.copy()
        other[0, t + 1:] = rng.integers(0, 13, size=9 - t)
        np.testing.assert_allclose(m.logits(other)[0, :t + 1], base[0, :t + 1], atol=1e-12)


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_mlm_initial_loss_near_log_vocab(variant):
    cfg = ModelConfig(arch="encoder_only", variant=variant, vocab_size=50, max_seq_len=16)
    m = build_model(cfg)
    toks = np.random.default_rng(1).integers(0, 49, size=(8, 16))
    loss = batch_loss(m, Batch(toks), TrainConfig(objective="mlm")).item()
    assert abs(loss - math.log(50)) <= 0.1 * math.log(50)


def test_dropout_only_in_training():
    m = build_model(ModelConfig(dropout=0.5))
    toks = np.arange(8)[None]
    a, b = m.logits(toks), m.logits(toks)
    assert np.array_equal(a, b)
    m.training = True
    assert not np.allclose(m.forward(toks).data, a)


def test_gradients_reach_every_parameter():
    m = build_model(ModelConfig(variant="mhe_add"))
    loss = batch_loss(m, Batch(np.random.default_rng(0).integers(0, 16, size=(2, 12))), TrainConfig())
    loss.backward()
    missing = [n for n, p in m.named_parameters() if p.grad is None]
    # positions beyond the input length get no gradient; everything else must
    assert missing == []
