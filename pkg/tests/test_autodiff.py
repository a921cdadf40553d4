import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acuity import autodiff as ad
from acuity.autodiff import functional as F

OP_TOL = 1e-6
EPS = 1e-5


def param(rng, *shape, scale=1.0):
    return ad.Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def weighted_sum(out, w):
    """Scalar probe loss so every output entry gets a distinct upstream gradient."""
    return (out * w).sum()


# --- conv1d ---------------------------------------------------------------------

def test_conv1d_identity_kernel():
    x = np.arange(12, dtype=float).reshape(1, 3, 4)
    w = np.zeros((1, 3, 1))
    w[0, 1, 0] = 1.0
    out = F.conv1d(ad.Tensor(x), ad.Tensor(w))
    np.testing.assert_array_equal(out.data[0, 0], x[0, 1])


def test_conv1d_hand_summed():
    out = F.conv1d(ad.Tensor([[[1.0, 2.0, 3.0]]]), ad.Tensor([[[1.0, 1.0]]]))
    np.testing.assert_array_equal(out.data, [[[3.0, 5.0]]])


def test_conv1d_stride_padding_matches_direct_loop():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 4, 11))
    w = rng.normal(size=(6, 2, 3))
    b = rng.normal(size=6)
    out = F.conv1d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b), stride=2, padding=1, groups=2).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    ref = np.zeros_like(out)
    for bi in range(2):
        for o in range(6):
            g = o // 3
            for j in range(out.shape[-1]):
                seg = xp[bi, 2 * g : 2 * g + 2, 2 * j : 2 * j + 3]
                ref[bi, o, j] = (seg * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_conv1d_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        F.conv1d(ad.Tensor(np.zeros((1, 3, 5))), ad.Tensor(np.zeros((2, 2, 3))))
    with pytest.raises(ValueError):
        F.conv1d(ad.Tensor(np.zeros((1, 1, 2))), ad.Tensor(np.zeros((1, 1, 3))))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), batch=st.integers(1, 3), groups=st.sampled_from([1, 2]),
       cin_per=st.integers(1, 3), cout_per=st.integers(1, 3), kernel=st.integers(1, 4),
       stride=st.integers(1, 3), padding=st.integers(0, 2), extra=st.integers(0, 6))
def test_conv1d_gradients(seed, batch, groups, cin_per, cout_per, kernel, stride, padding, extra):
    rng = np.random.default_rng(seed)
    length = max(1, kernel - 2 * padding) + extra
    x = param(rng, batch, groups * cin_per, length)
    w = param(rng, groups * cout_per, cin_per, kernel)
    b = param(rng, groups * cout_per)
    lout = F.conv_output_length(length, kernel, stride, padding)
    probe = rng.normal(size=(batch, groups * cout_per, lout))
    fn = lambda: weighted_sum(F.conv1d(x, w, b, stride, padding, groups), probe)
    assert ad.check_gradients(fn, [x, w, b], eps=EPS) < OP_TOL


def test_depthwise_conv_gradients():
    rng = np.random.default_rng(3)
    x, w, b = param(rng, 2, 4, 9), param(rng, 4, 1, 3), param(rng, 4)
    probe = rng.normal(size=(2, 4, 5))
    fn = lambda: weighted_sum(F.conv1d(x, w, b, stride=2, padding=1, groups=4), probe)
    assert ad.check_gradients(fn, [x, w, b], eps=EPS) < OP_TOL


# --- pooling, dense, activations ---------------------------------------------------

def test_pooling_hand_values():
    x = ad.Tensor([[[1.0, 3.0, 2.0, 0.0, 5.0, 4.0]]])
    np.testing.assert_array_equal(F.max_pool1d(x, 2).data, [[[3.0, 2.0, 5.0]]])
    np.testing.assert_array_equal(F.avg_pool1d(x, 2).data, [[[2.0, 1.0, 4.5]]])
    np.testing.assert_array_equal(F.global_avg_pool1d(x).data, [[2.5]])
    # kernel 1 is the identity
    np.testing.assert_array_equal(F.max_pool1d(x, 1).data, x.data)
    np.testing.assert_array_equal(F.avg_pool1d(x, 1).data, x.data)


@pytest.mark.parametrize("kernel,stride", [(2, 2), (3, 2), (3, 1), (4, 4)])
def test_pooling_gradients(kernel, stride):
    rng = np.random.default_rng(kernel * 10 + stride)
    x = param(rng, 2, 3, 13)
    for pool in (F.max_pool1d, F.avg_pool1d):
        out_shape = pool(x, kernel, stride).shape
        probe = rng.normal(size=out_shape)
        fn = lambda: weighted_sum(pool(x, kernel, stride), probe)
        assert ad.check_gradients(fn, [x], eps=EPS) < OP_TOL


def test_dense_hand_value_and_gradient():
    x = ad.Tensor([[1.0, 2.0]], requires_grad=True)
    w = ad.Tensor([[1.0, 0.0, -1.0], [2.0, 1.0, 0.5]], requires_grad=True)
    b = ad.Tensor([0.5, 0.0, 0.0], requires_grad=True)
    np.testing.assert_array_equal(ad.linear(x, w, b).data, [[5.5, 2.0, 0.0]])
    rng = np.random.default_rng(0)
    x2, w2, b2 = param(rng, 4, 5), param(rng, 5, 3), param(rng, 3)
    probe = rng.normal(size=(4, 3))
    assert ad.check_gradients(lambda: weighted_sum(ad.linear(x2, w2, b2), probe), [x2, w2, b2]) < OP_TOL


def test_activation_hand_values():
    x = ad.Tensor([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(ad.relu(x).data, [0.0, 0.0, 3.0])
    s = ad.sigmoid(ad.Tensor([0.0, 800.0, -800.0])).data
    np.testing.assert_array_equal(s, [0.5, 1.0, 0.0])
    sm = ad.softmax(ad.Tensor([[0.0, math.log(3.0)]])).data
    np.testing.assert_allclose(sm, [[0.25, 0.75]], rtol=1e-15)


def test_activation_gradients():
    rng = np.random.default_rng(5)
    x = param(rng, 3, 7)
    # keep relu inputs away from the kink so central differences are valid
    x.data = np.where(np.abs(x.data) < 1e-2, 0.5, x.data)
    probe = rng.normal(size=(3, 7))
    for op in (ad.relu, ad.sigmoid, lambda t: ad.softmax(t, axis=-1), lambda t: ad.softmax(t, axis=0)):
        assert ad.check_gradients(lambda: weighted_sum(op(x), probe), [x], eps=EPS) < OP_TOL


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**16), rows=st.integers(1, 6), cols=st.integers(1, 9),
       shift=st.floats(-50, 50))
def test_softmax_rows_and_shift_invariance(seed, rows, cols, shift):
    z = np.random.default_rng(seed).normal(0, 5, (rows, cols))
    s = ad.softmax(ad.Tensor(z)).data
    assert np.abs(s.sum(axis=-1) - 1.0).max() <= 1e-12
    assert np.abs(ad.softmax(ad.Tensor(z + shift)).data - s).max() <= 1e-12


def test_concat_and_shape_op_gradients():
    rng = np.random.default_rng(7)
    a, b = param(rng, 2, 3), param(rng, 2, 4)
    probe = rng.normal(size=(2, 7))
    assert ad.check_gradients(lambda: weighted_sum(ad.concat([a, b], axis=1), probe), [a, b]) < OP_TOL
    c = param(rng, 2, 3, 4)
    probe2 = rng.normal(size=(4, 2, 3))
    fn = lambda: weighted_sum(ad.transpose(c, (2, 0, 1)), probe2)
    assert ad.check_gradients(fn, [c]) < OP_TOL
    fn = lambda: weighted_sum(ad.reshape(c, (6, 4)), probe2.reshape(6, 4))
    assert ad.check_gradients(fn, [c]) < OP_TOL
    np.testing.assert_array_equal(ad.concat([ad.Tensor([[1.0]]), ad.Tensor([[2.0, 3.0]])]).data, [[1, 2, 3]])


def test_global_pool_and_layer_norm_gradients():
    rng = np.random.default_rng(11)
    x = param(rng, 2, 3, 5)
    probe = rng.normal(size=(2, 3))
    assert ad.check_gradients(lambda: weighted_sum(F.global_avg_pool1d(x), probe), [x]) < OP_TOL
    h, gamma, beta = param(rng, 2, 4, 6), param(rng, 6), param(rng, 6)
    probe = rng.normal(size=(2, 4, 6))
    fn = lambda: weighted_sum(F.layer_norm(h, gamma, beta), probe)
    assert ad.check_gradients(fn, [h, gamma, beta]) < OP_TOL


def test_broadcast_arithmetic_gradients():
    rng = np.random.default_rng(13)
    a, b = param(rng, 3, 4), param(rng, 1, 4)
    c = ad.Tensor(rng.uniform(1.0, 2.0, (3, 1)), requires_grad=True)
    probe = rng.normal(size=(3, 4))
    fn = lambda: weighted_sum((a * b - a) / c + b, probe)
    assert ad.check_gradients(fn, [a, b, c]) < OP_TOL


def test_batched_matmul_gradient():
    rng = np.random.default_rng(17)
    a, b = param(rng, 2, 3, 4, 5), param(rng, 2, 3, 5, 2)
    probe = rng.normal(size=(2, 3, 4, 2))
    assert ad.check_gradients(lambda: weighted_sum(a @ b, probe), [a, b]) < OP_TOL


def test_backward_visits_shared_node_once():
    x = ad.Tensor(3.0, requires_grad=True)
    y = x * x
    z = y + y  # y consumed twice; dz/dx = 4x
    z.backward()
    assert x.grad == pytest.approx(12.0)


# --- attention and positional encoding ------------------------------------------------

def test_attention_single_position_is_value_projection():
    rng = np.random.default_rng(0)
    mha = ad.MultiHeadAttention(4, 2, rng)
    x = ad.Tensor(rng.normal(size=(2, 1, 4)))
    out = mha(x).data
    expected = mha.output(mha.value(x)).data
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-14)


def test_attention_uniform_keys_give_uniform_weights():
    rng = np.random.default_rng(1)
    q = ad.Tensor(rng.normal(size=(1, 5, 4)))
    k = ad.Tensor(np.tile(rng.normal(size=(1, 1, 4)), (1, 5, 1)))
    v = ad.Tensor(rng.normal(size=(1, 5, 4)))
    _, weights = F.scaled_dot_product_attention(q, k, v, heads=2, return_weights=True)
    np.testing.assert_allclose(weights.data, np.full((1, 2, 5, 5), 0.2), atol=1e-15)


def test_attention_matches_per_head_loop():
    rng = np.random.default_rng(2)
    q, k, v = (rng.normal(size=(2, 3, 4)) for _ in range(3))
    out = F.scaled_dot_product_attention(ad.Tensor(q), ad.Tensor(k), ad.Tensor(v), heads=2).data
    ref = np.zeros_like(out)
    for bi in range(2):
        for h in range(2):
            sl = slice(2 * h, 2 * h + 2)
            s = q[bi, :, sl] @ k[bi, :, sl].T / math.sqrt(2)
            w = np.exp(s - s.max(axis=1, keepdims=True))
            w /= w.sum(axis=1, keepdims=True)
            ref[bi, :, sl] = w @ v[bi, :, sl]
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_attention_rejects_indivisible_width():
    x = ad.Tensor(np.zeros((1, 2, 5)))
    with pytest.raises(ValueError):
        F.scaled_dot_product_attention(x, x, x, heads=2)


def test_attention_gradient():
    rng = np.random.default_rng(3)
    mha = ad.MultiHeadAttention(4, 2, rng)
    x = param(rng, 1, 3, 4)
    probe = rng.normal(size=(1, 3, 4))
    fn = lambda: weighted_sum(mha(x), probe)
    assert ad.check_gradients(fn, [x] + mha.parameters(), eps=EPS) < OP_TOL


def test_positional_encoding_position_zero_and_determinism():
    pe = F.positional_encoding(50, 8)
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)
    np.testing.assert_array_equal(pe, F.positional_encoding(50, 8))
    odd = F.positional_encoding(4, 5)
    assert odd.shape == (4, 5)


def test_positional_encoding_distinct_rows():
    pe = F.positional_encoding(10_000, 16)
    # pairwise distinctness via sorting on full rows
    rows = np.unique(pe, axis=0)
    assert rows.shape[0] == 10_000
    # and no near-collisions: nearest distinct neighbours stay well separated
    order = np.lexsort(pe.T[::-1])
    gaps = np.abs(np.diff(pe[order], axis=0)).max(axis=1)
    assert gaps.min() > 1e-9


# --- loss ------------------------------------------------------------------------

def test_bce_values():
    assert ad.bce_with_logits(ad.Tensor([0.0]), [1]).item() == pytest.approx(math.log(2), rel=1e-15)
    assert ad.bce_with_logits(ad.Tensor([20.0]), [1]).item() == pytest.approx(math.log1p(math.exp(-20)), rel=1e-12)
    assert ad.bce_with_logits(ad.Tensor([20.0]), [1]).item() == pytest.approx(2.06e-9, rel=1e-2)
    assert np.isfinite(ad.bce_with_logits(ad.Tensor([-1000.0, 1000.0]), [1, 0]).item())


def test_bce_gradient():
    rng = np.random.default_rng(9)
    z = param(rng, 5, scale=2.0)
    y = rng.integers(0, 2, 5)
    assert ad.check_gradients(lambda: ad.bce_with_logits(z, y), [z], eps=EPS) < OP_TOL


# --- optimizer -----------------------------------------------------------------------

def test_adamw_zero_gradient_no_decay_is_noop():
    p = np.array([1.0, -2.0])
    (new,) = ad.adamw_step([p], [np.zeros(2)], {}, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(new, p)


def test_adamw_first_step_closed_form():
    (new,) = ad.adamw_step([np.array([0.0])], [np.array([1.0])], {}, lr=0.1)
    # bias-corrected m/sqrt(v) = 1 on the first step
    assert new[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-15)


def test_adamw_decay_only_shrinks():
    p = np.array([2.0, -4.0])
    (new,) = ad.adamw_step([p], [np.zeros(2)], {}, lr=0.1, weight_decay=0.01)
    np.testing.assert_allclose(new, p * (1 - 0.1 * 0.01), rtol=1e-15)


def test_adamw_non_finite_gradient_aborts():
    with pytest.raises(ad.NonFiniteGradient):
        ad.adamw_step([np.zeros(1)], [np.array([np.nan])], {}, lr=0.1)


def test_loss_decreases_on_separable_toy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(float)
    layer = ad.Linear(2, 1, rng)
    opt = ad.AdamW(layer.parameters(), lr=0.05)
    losses = []
    for _ in range(200):
        opt.zero_grad()
        loss = ad.bce_with_logits(layer(ad.Tensor(x)), y)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    assert losses[-1] < 0.5 * losses[0]
    assert all(b <= a + 1e-12 for a, b in zip(losses[:50], losses[1:51]))


# --- determinism and checkpoints --------------------------------------------------------

def test_forward_determinism():
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(2, 3, 20)), rng.normal(size=(5, 3, 3))
    a = F.conv1d(ad.Tensor(x), ad.Tensor(w), padding=1).data
    b = F.conv1d(ad.Tensor(x), ad.Tensor(w), padding=1).data
    assert a.tobytes() == b.tobytes()


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"conv.weight": rng.normal(size=(4, 3, 2)), "head.bias": rng.normal(size=1),
               "scalar": np.array(2.5)}
    path = tmp_path / "m.ckpt"
    ad.save_checkpoint(path, tensors)
    loaded = ad.load_checkpoint(path)
    assert set(loaded) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(loaded[k], tensors[k])
    assert path.read_bytes()[:4] == b"ACKP"
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ad.CheckpointError):
        ad.load_checkpoint(path)


def test_no_grad_builds_no_graph():
    w = ad.Tensor([1.0, 2.0], requires_grad=True)
    with ad.no_grad():
        out = w * 3.0
    assert not out.requires_grad and out._parents == ()
