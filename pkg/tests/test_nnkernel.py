import math

import numpy as np
import pytest

from clusteraug import nnkernel as nn
from oracles import attention_oracle, check_gradients, finite_difference, grad_close


def make_block(d, h, rng):
    store = nn.ParamStore()
    return store, nn.attention_block(store, "attn", d, h, rng)


# --- basic ops and error paths -----------------------------------------------


def test_tensor_rejects_non_finite():
    with pytest.raises(nn.KernelError):
        nn.tensor([1.0, float("inf")])
    with pytest.raises(nn.KernelError):
        nn.log(nn.tensor([0.0]))  # -inf result


def test_backward_requires_scalar_graph():
    t = nn.tensor([[1.0, 2.0]], requires_grad=True)
    with pytest.raises(nn.KernelError):
        t.backward()  # not a scalar
    with pytest.raises(nn.KernelError):
        nn.tensor(3.0).backward()  # detached


def test_shape_mismatch_errors():
    a = nn.tensor(np.ones((2, 3)))
    b = nn.tensor(np.ones((3, 2)))
    with pytest.raises(nn.KernelError):
        nn.add(a, b)
    with pytest.raises(nn.KernelError):
        nn.matmul(a, nn.tensor(np.ones((2, 2))))


def test_quadratic_gradient():
    w = nn.tensor([1.0, -2.0, 3.0], requires_grad=True)
    loss = nn.sum_all(nn.mul(w, w))
    loss.backward()
    assert np.allclose(w.grad, 2 * w.data)


def test_softmax_cross_entropy_closed_form():
    rng = np.random.default_rng(0)
    logits = nn.tensor(rng.standard_normal((4, 7)), requires_grad=True)
    targets = [2, 0, 6, 3]
    loss = nn.cross_entropy(logits, targets)
    loss.backward()
    probs = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(4), targets] = 1.0
    assert np.allclose(logits.grad, probs - one_hot, atol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    x = nn.tensor(rng.standard_normal((5, 9)) * 10)
    p = nn.softmax_rows(x)
    assert np.abs(p.data.sum(axis=1) - 1.0).max() < 1e-9


def test_determinism_bitwise():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 8))
    a = nn.softmax_rows(nn.tensor(x)).data
    b = nn.softmax_rows(nn.tensor(x)).data
    assert np.array_equal(a, b)


# --- layer norm ---------------------------------------------------------------


def test_layer_norm_constant_row_is_zero():
    gain = nn.tensor(np.ones(4))
    bias = nn.tensor(np.zeros(4))
    out = nn.layer_norm(nn.tensor([[3.0, 3.0, 3.0, 3.0]]), gain, bias)
    assert np.allclose(out.data, 0.0)


def test_layer_norm_two_point_row():
    gain = nn.tensor(np.ones(2))
    bias = nn.tensor(np.zeros(2))
    out = nn.layer_norm(nn.tensor([[1.0, -1.0]]), gain, bias)
    expected = 1.0 / math.sqrt(1.0 + 1e-5)  # variance is exactly 1, plus epsilon
    assert np.allclose(out.data, [[expected, -expected]], atol=1e-15)


def test_layer_norm_bias_sets_mean():
    rng = np.random.default_rng(3)
    gain = nn.tensor(np.ones(6))
    bias = nn.tensor(np.full(6, 0.7))
    out = nn.layer_norm(nn.tensor(rng.standard_normal((3, 6))), gain, bias)
    assert np.allclose(out.data.mean(axis=1), 0.7, atol=1e-6)


def test_layer_norm_requires_width_two():
    with pytest.raises(nn.KernelError):
        nn.layer_norm(nn.tensor([[1.0]]), nn.tensor([1.0]), nn.tensor([0.0]))


# --- KL divergence --------------------------------------------------------------


def test_kl_identity_is_zero():
    p = nn.tensor([0.2, 0.3, 0.5])
    assert float(nn.kl_divergence(p, p).data) == pytest.approx(0.0, abs=1e-12)


def test_kl_hand_computed_values():
    kl = nn.kl_divergence(nn.tensor([1.0, 0.0]), nn.tensor([0.5, 0.5]))
    assert float(kl.data) == pytest.approx(math.log(2.0), abs=1e-9)
    kl = nn.kl_divergence(nn.tensor([0.5, 0.5]), nn.tensor([0.25, 0.75]))
    expected = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
    assert float(kl.data) == pytest.approx(expected, abs=1e-9)
    assert float(kl.data) == pytest.approx(0.143841, abs=1e-6)


def test_kl_rejects_unnormalized():
    with pytest.raises(nn.KernelError):
        nn.kl_divergence(nn.tensor([0.7, 0.7]), nn.tensor([0.5, 0.5]))


def test_kl_nonnegative_fuzz():
    rng = np.random.default_rng(4)
    for _ in range(50):
        p = rng.random(6) + 1e-3
        q = rng.random(6) + 1e-3
        p, q = p / p.sum(), q / q.sum()
        assert float(nn.kl_divergence(nn.tensor(p), nn.tensor(q)).data) >= -1e-12


# --- attention -----------------------------------------------------------------


def test_attention_single_key_passthrough():
    rng = np.random.default_rng(5)
    store, block = make_block(4, 2, rng)
    queries = nn.tensor(rng.standard_normal((3, 4)))
    kv = nn.tensor(rng.standard_normal((1, 4)))
    out = nn.multi_head_attention(block, queries, kv, np.ones((3, 1), dtype=bool))
    # softmax over one key is 1 for every query: output projects the value row
    v = kv.data @ block.w_v.data
    expected = np.tile(v, (3, 1)) @ block.w_o.data + block.b_o.data
    assert np.allclose(out.data, expected, atol=1e-12)


def test_attention_forced_position():
    rng = np.random.default_rng(6)
    store, block = make_block(4, 2, rng)
    queries = nn.tensor(rng.standard_normal((2, 4)))
    kv = nn.tensor(rng.standard_normal((5, 4)))
    mask = np.zeros((2, 5), dtype=bool)
    mask[0, 3] = True
    mask[1, 0] = True
    out = nn.multi_head_attention(block, queries, kv, mask)
    v = kv.data @ block.w_v.data
    expected = np.stack([v[3], v[0]]) @ block.w_o.data + block.b_o.data
    assert np.allclose(out.data, expected, atol=1e-12)


def test_attention_matches_oracle():
    rng = np.random.default_rng(7)
    store, block = make_block(4, 2, rng)
    queries = rng.standard_normal((2, 4))
    kv = rng.standard_normal((3, 4))
    mask = np.array([[True, False, True], [True, True, True]])
    out = nn.multi_head_attention(block, nn.tensor(queries), nn.tensor(kv), mask)
    expected = attention_oracle(
        block.w_q.data, block.w_k.data, block.w_v.data, block.w_o.data, block.b_o.data,
        2, queries, kv, mask,
    )
    assert np.allclose(out.data, expected, atol=1e-12)


def test_attention_empty_row_policy():
    rng = np.random.default_rng(8)
    store, block = make_block(4, 2, rng)
    queries = nn.tensor(rng.standard_normal((2, 4)))
    kv = nn.tensor(rng.standard_normal((3, 4)))
    mask = np.array([[False, False, False], [True, False, False]])
    with pytest.raises(nn.KernelError):
        nn.multi_head_attention(block, queries, kv, mask)
    out = nn.multi_head_attention(block, queries, kv, mask, zero_on_empty=True)
    assert np.array_equal(out.data[0], np.zeros(4))
    assert not np.allclose(out.data[1], 0.0)


def test_masked_key_gets_zero_gradient():
    rng = np.random.default_rng(9)
    store, block = make_block(4, 1, rng)
    queries = nn.tensor(rng.standard_normal((1, 4)), requires_grad=True)
    kv = nn.tensor(rng.standard_normal((3, 4)), requires_grad=True)
    mask = np.array([[True, False, True]])
    out = nn.multi_head_attention(block, queries, kv, mask)
    nn.sum_all(out).backward()
    assert np.allclose(kv.grad[1], 0.0)
    assert not np.allclose(kv.grad[0], 0.0)


# --- gradient checks -----------------------------------------------------------


def test_gradcheck_attention():
    rng = np.random.default_rng(10)
    store, block = make_block(8, 2, rng)
    queries = nn.tensor(rng.standard_normal((3, 8)), requires_grad=True)
    kv = nn.tensor(rng.standard_normal((4, 8)), requires_grad=True)
    mask = rng.random((3, 4)) < 0.7
    mask[:, 0] = True
    weights = rng.standard_normal((3, 8))

    def loss():
        out = nn.multi_head_attention(block, queries, kv, mask)
        return nn.sum_all(nn.mul(out, nn.tensor(weights)))

    params = store.tensors() + [queries, kv]
    assert check_gradients(loss, params) == []


def test_gradcheck_layer_norm():
    rng = np.random.default_rng(11)
    x = nn.tensor(rng.standard_normal((4, 6)), requires_grad=True)
    gain = nn.tensor(rng.standard_normal(6), requires_grad=True)
    bias = nn.tensor(rng.standard_normal(6), requires_grad=True)
    weights = rng.standard_normal((4, 6))

    def loss():
        return nn.sum_all(nn.mul(nn.layer_norm(x, gain, bias), nn.tensor(weights)))

    assert check_gradients(loss, [x, gain, bias]) == []


def test_gradcheck_feed_forward_layer():
    rng = np.random.default_rng(12)
    store = nn.ParamStore()
    layer = nn.transformer_layer(store, "l0", 8, 16, 2, rng)
    x = nn.tensor(rng.standard_normal((3, 8)), requires_grad=True)
    weights = rng.standard_normal((3, 8))

    def loss():
        return nn.sum_all(nn.mul(nn.feed_forward(layer, x), nn.tensor(weights)))

    ff_params = [layer.ff_w1, layer.ff_b1, layer.ff_w2, layer.ff_b2, x]
    assert check_gradients(loss, ff_params) == []


def test_gradcheck_cross_entropy():
    rng = np.random.default_rng(13)
    logits = nn.tensor(rng.standard_normal((5, 11)), requires_grad=True)
    targets = rng.integers(0, 11, size=5)

    def loss():
        return nn.cross_entropy(logits, targets)

    assert check_gradients(loss, [logits]) == []


def test_gradcheck_kl_through_softmax():
    # KL between two softmax rows, differentiable through both arguments
    rng = np.random.default_rng(15)
    logits = nn.tensor(rng.standard_normal((2, 7)), requires_grad=True)

    def loss():
        p = nn.softmax_rows(logits)
        return nn.kl_divergence(
            nn.flatten(nn.slice_rows(p, 0, 1)), nn.flatten(nn.slice_rows(p, 1, 2))
        )

    assert check_gradients(loss, [logits]) == []
