import math

import numpy as np
import pytest

from mhelab import accounting
from mhelab import tensor as T
from mhelab.attention import (ALL_VARIANTS, AttentionVariant, apply_head_embedding, attention_forward,
                              head_outputs, init_params, scaled_dot_attention, weight_shapes)
from mhelab.errors import ContractError, DimensionError
from mhelab.gradcheck import gradcheck_model
from mhelab.tensor import Tensor

V = AttentionVariant


def test_parse_accepts_cli_tags():
    assert V.parse("mhe-mul") is V.MHE_MUL
    assert V.parse("el-att") is V.EL_ATT
    assert V.parse("Sha") is V.SHA
    with pytest.raises(ContractError, match="valid"):
        V.parse("gqa")


def test_init_counts_examples():
    assert init_params(V.MHE_MUL, 2, 3, seed=1).count() == 108
    assert init_params(V.SHA, 1, 2).count() == 16


def test_init_is_deterministic():
    a, b = init_params(V.MHA, 2, 3, seed=5), init_params(V.MHA, 2, 3, seed=5)
    for name in a.weights:
        assert a.weights[name].data.tobytes() == b.weights[name].data.tobytes()


def test_init_rejects_bad_dims():
    with pytest.raises(ContractError):
        init_params(V.MHA, 0, 3)


def test_init_distribution():
    p = init_params(V.MHE_ADD, 16, 16, seed=0)
    w = np.concatenate([t.data.ravel() for t in p.tensors()])
    assert abs(w.mean()) < 2e-3 and abs(w.std() - 0.02) < 1e-3
    assert np.all(p.weights["eq"].data != 0)


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_param_count_linkage(variant):
    for n in range(1, 9):
        for d in range(1, 9):
            total = sum(math.prod(s) for s in weight_shapes(variant, n, d).values())
            assert total == accounting.attention_params(variant, n, d) + (n * d) ** 2


def test_attention_single_position_returns_v(rng):
    v = rng.normal(size=(1, 3))
    out = scaled_dot_attention(Tensor(rng.normal(size=(1, 3))), Tensor(rng.normal(size=(1, 3))), Tensor(v))
    np.testing.assert_allclose(out.data, v, atol=1e-15)


def test_identical_keys_give_column_mean(rng):
    q = rng.normal(size=(4, 2))
    k = np.tile(rng.normal(size=(1, 2)), (4, 1))
    v = rng.normal(size=(4, 2))
    out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v)).data
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (4, 1)), atol=1e-12)
    causal = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), causal=True).data
    np.testing.assert_allclose(causal[0], v[0], atol=1e-12)


def test_hand_computed_two_by_one():
    out = scaled_dot_attention(Tensor([[1.0], [2.0]]), Tensor([[1.0], [0.0]]), Tensor([[3.0], [5.0]])).data
    e = math.e
    assert out[0, 0] == pytest.approx((3 * e + 5) / (1 + e), abs=1e-12)
    assert out[0, 0] == pytest.approx(3.537883, abs=1e-6)


def test_attention_shape_mismatch():
    with pytest.raises(DimensionError):
        scaled_dot_attention(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))), Tensor(np.ones((2, 3))))


def test_attention_rows_convex(rng):
    q, k, v = (rng.normal(size=(6, 3)) for _ in range(3))
    out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v)).data
    assert np.all(out <= v.max(axis=0) + 1e-12) and np.all(out >= v.min(axis=0) - 1e-12)


def test_head_embedding_examples(rng):
    M = Tensor(rng.normal(size=(3, 2)))
    zero = Tensor(np.zeros(2))
    assert np.array_equal(apply_head_embedding(V.MHE_ADD, M, zero).data, M.data)
    assert np.array_equal(apply_head_embedding(V.MHE_MUL, M, zero).data, M.data)
    out = apply_head_embedding(V.MHE_MUL, Tensor([[1.0, 2.0]]), Tensor([1.0, -0.5]))
    assert out.data.tolist() == [[2.0, 1.0]]
    with pytest.raises(DimensionError):
        apply_head_embedding(V.MHE_ADD, M, Tensor(np.zeros(3)))
    with pytest.raises(ContractError):
        apply_head_embedding(V.MHA, M, zero)


def _brute_force_mha(X, wq, wk, wv, wo, n, d):
    L = X.shape[0]
    heads = []
    for i in range(n):
        cols = slice(i * d, (i + 1) * d)
        q = [[sum(X[t, a] * wq[a, c] for a in range(X.shape[1])) for c in range(*cols.indices(n * d))] for t in range(L)]
        k = [[sum(X[t, a] * wk[a, c] for a in range(X.shape[1])) for c in range(*cols.indices(n * d))] for t in range(L)]
        v = [[sum(X[t, a] * wv[a, c] for a in range(X.shape[1])) for c in range(*cols.indices(n * d))] for t in range(L)]
        H = []
        for t in range(L):
            logits = [sum(q[t][j] * k[s][j] for j in range(d)) / math.sqrt(d) for s in range(L)]
            z = sum(math.exp(x) for x in logits)
            H.append([sum(math.exp(logits[s]) / z * v[s][j] for s in range(L)) for j in range(d)])
        heads.append(H)
    concat = [[heads[i][t][j] for i in range(n) for j in range(d)] for t in range(L)]
    return np.array([[sum(concat[t][a] * wo[a, c] for a in range(n * d)) for c in range(n * d)]
                     for t in range(L)])


def test_mha_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    p = init_params(V.MHA, 2, 1, seed=3)
    for t in p.tensors():
        t.data[:] = rng.uniform(-1, 1, size=t.shape)
    X = rng.normal(size=(2, 2))
    w = {k: t.data for k, t in p.weights.items()}
    expected = _brute_force_mha(X, w["wq"], w["wk"], w["wv"], w["wo"], 2, 1)
    np.testing.assert_allclose(attention_forward(p, Tensor(X)).data, expected, atol=1e-12)


def _copy_seed_weights(src, dst):
    for name in ("wq", "wk", "wv", "wo"):
        dst.weights[name].data[:] = src.weights[name].data


@pytest.mark.parametrize("variant", [V.MHE_ADD, V.MHE_MUL])
def test_zero_embedding_reduces_to_sha(variant, rng):
    sha = init_params(V.SHA, 3, 4, seed=11)
    mhe = init_params(variant, 3, 4, seed=99)
    _copy_seed_weights(sha, mhe)
    for c in "qkv":
        mhe.weights["e" + c].data[:] = 0.0
    X = Tensor(rng.normal(size=(2, 5, 12)))
    heads = head_outputs(mhe, X).data
    for i in range(1, 3):
        np.testing.assert_array_equal(heads[:, i], heads[:, 0])
    np.testing.assert_allclose(attention_forward(mhe, X).data, attention_forward(sha, X).data, atol=1e-12)


@pytest.mark.parametrize("variant", [V.MHE_ADD, V.MHE_MUL, V.MHA, V.MQA, V.SKV, V.EL_ATT])
def test_head_diversity(variant, rng):
    p = init_params(variant, 3, 4, seed=2)
    for t in p.tensors():
        t.data *= 20
    heads = head_outputs(p, Tensor(rng.normal(size=(1, 5, 12)))).data
    assert np.max(np.abs(heads[:, 0] - heads[:, 1])) > 0


def test_sha_heads_identical(rng):
    p = init_params(V.SHA, 3, 2, seed=0)
    heads = head_outputs(p, Tensor(rng.normal(size=(1, 4, 6)))).data
    np.testing.assert_array_equal(heads[:, 2], heads[:, 0])


def test_el_att_uses_column_slices(rng):
    p = init_params(V.EL_ATT, 2, 3, seed=0)
    X = rng.normal(size=(1, 4, 6))
    q, k, v = __import__("mhelab.attention", fromlist=["project_qkv"]).project_qkv(p, Tensor(X))
    np.testing.assert_array_equal(k.data[0, 1], X[0, :, 3:6])
    assert k is v


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_causal_prefix_independence(variant, rng):
    p = init_params(variant, 2, 3, seed=4, dtype=np.float64)
    for t in p.tensors():
        t.data *= 10
    X = rng.normal(size=(1, 5, 6))
    base = head_outputs(p, Tensor(X), causal=True).data
    for t in range(5):
        Y = X.copy()
        Y[0, t:] += rng.normal(size=(5 - t, 6))
        pert = head_outputs(p, Tensor(Y), causal=True).data
        np.testing.assert_allclose(pert[:, :, :t], base[:, :, :t], atol=1e-12)


def test_forward_accepts_2d_and_checks_width(rng):
    p = init_params(V.MQA, 2, 2)
    assert attention_forward(p, Tensor(rng.normal(size=(3, 4)))).shape == (3, 4)
    with pytest.raises(DimensionError):
        attention_forward(p, Tensor(rng.normal(size=(3, 5))))


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_gradient_completeness_n2_d3(variant):
    results = gradcheck_model(variant, seed=1, n_heads=2, head_dim=3, seq_len=4)
    names = {r.name for r in results}
    assert all(f"layers.0.attn.{w}" in names for w in weight_shapes(variant, 2, 3))
    assert all(r.ok for r in results), [r for r in results if not r.ok]
