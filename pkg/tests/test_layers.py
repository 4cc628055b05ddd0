import numpy as np
import pytest

from chrononet.errors import ConfigError, DataError, ShapeError
from chrononet.layers import (ConvParams, DenseGruStack, GruParams,
                              InceptionConvBlock, RnnParams, connection_count,
                              conv1d_forward, conv1d_output_length,
                              dense_gru_forward, glorot_uniform,
                              gru_layer_forward, gru_step,
                              inception_conv1d_forward, last_time_step,
                              linear_forward, rnn_step)
from chrononet.tensor import Graph, Prng, Tensor, backward, tsum


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# initialization


def test_glorot_bound_32x32():
    draws = glorot_uniform(Prng(0), (32, 32), 32, 32, dtype=np.float64)
    bound = np.sqrt(6.0 / 64.0)
    assert bound == pytest.approx(0.3061862178478973)
    assert np.abs(draws).max() <= bound
    # fills a decent part of the interval, i.e. not degenerate
    assert np.abs(draws).max() > 0.9 * bound


def test_init_biases_zero_and_reproducible():
    p1 = GruParams.init(Prng(5), 3, 4)
    p2 = GruParams.init(Prng(5), 3, 4)
    for (n1, t1), (n2, t2) in zip(p1.tensors(), p2.tensors()):
        assert n1 == n2
        assert np.array_equal(t1.data, t2.data)
    assert np.all(p1.b_z.data == 0) and np.all(p1.b_r.data == 0) and np.all(p1.b_h.data == 0)
    conv = ConvParams.init(Prng(5), 2, 4, 3, 1)
    assert np.all(conv.bias.data == 0)


def test_param_bundle_validation():
    with pytest.raises(ConfigError):
        GruParams.zeros(3, 4).__class__(
            **{**{n: t for n, t in GruParams.zeros(3, 4).tensors()},
               "U_h": Tensor(np.zeros((2, 2)))})
    with pytest.raises(ConfigError):
        ConvParams(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)), 1)
    with pytest.raises(ConfigError):
        ConvParams(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros(2)), 0)
    with pytest.raises(ConfigError):
        RnnParams(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 3))),
                  Tensor(np.zeros(3)), activation="softplus")


# ---------------------------------------------------------------------------
# recurrent cells


def test_gru_step_zero_params_returns_zero():
    p = GruParams.zeros(2, 3)
    x = Tensor(np.random.default_rng(0).normal(size=(4, 2)))
    h0 = Tensor(np.zeros((4, 3)))
    h, z, r, cand = gru_step(p, x, h0)
    assert np.all(h.data == 0.0)
    assert np.allclose(z.data, 0.5) and np.allclose(r.data, 0.5)
    assert np.all(cand.data == 0.0)


def test_gru_step_scalar_oracle():
    # all weights 1, biases 0, x=1, h_prev=0.5, evaluated independently
    p = GruParams.zeros(1, 1)
    for name, t in p.tensors():
        if name.startswith(("W", "U")):
            t.data[:] = 1.0
    h, z, r, cand = gru_step(p, Tensor([[1.0]]), Tensor([[0.5]]))
    ze = sigmoid(1.0 + 0.5)
    re = sigmoid(1.0 + 0.5)
    ce = np.tanh(1.0 + re * 0.5)
    he = (1 - ze) * 0.5 + ze * ce
    assert ze == pytest.approx(0.8175744761936437, abs=1e-15)
    assert ce == pytest.approx(0.8872363204513926, abs=1e-12)
    assert he == pytest.approx(0.8165945318562012, abs=1e-12)
    assert abs(z.item() - ze) < 1e-12
    assert abs(r.item() - re) < 1e-12
    assert abs(cand.item() - ce) < 1e-12
    assert abs(h.item() - he) < 1e-12


def test_gru_step_gate_ranges_and_interpolation():
    rng = np.random.default_rng(2)
    p = GruParams.init(Prng(2), 5, 4, dtype=np.float64)
    x = Tensor(rng.normal(size=(6, 5)) * 3)
    h_prev = Tensor(rng.normal(size=(6, 4)))
    h, z, r, cand = gru_step(p, x, h_prev)
    assert np.all((z.data > 0) & (z.data < 1))
    assert np.all((r.data > 0) & (r.data < 1))
    assert np.all((cand.data > -1) & (cand.data < 1))
    lo = np.minimum(h_prev.data, cand.data)
    hi = np.maximum(h_prev.data, cand.data)
    assert np.all(h.data >= lo - 1e-12) and np.all(h.data <= hi + 1e-12)


def test_gru_step_huge_negative_update_bias_keeps_state():
    p = GruParams.init(Prng(3), 2, 3, dtype=np.float64)
    p.b_z.data[:] = -1e3  # z -> 0 so h_t -> h_prev
    x = Tensor(np.random.default_rng(3).normal(size=(2, 2)))
    h_prev = Tensor(np.random.default_rng(4).normal(size=(2, 3)))
    h, z, _, _ = gru_step(p, x, h_prev)
    assert np.allclose(h.data, h_prev.data)
    assert np.all(z.data < 1e-10)


def test_rnn_step_matches_formula():
    p = RnnParams.init(Prng(1), 3, 2, dtype=np.float64)
    x = Tensor(np.random.default_rng(1).normal(size=(4, 3)))
    h = Tensor(np.random.default_rng(2).normal(size=(4, 2)))
    out = rnn_step(p, x, h)
    expected = np.tanh(x.data @ p.W.data.T + h.data @ p.U.data.T + p.b.data)
    assert np.allclose(out.data, expected)


def test_gru_layer_matches_step_composition():
    p = GruParams.init(Prng(4), 3, 4, dtype=np.float64)
    seq = Tensor(np.random.default_rng(5).normal(size=(2, 3, 5)))
    fused = gru_layer_forward(p, seq)
    h = Tensor(np.zeros((2, 4)))
    outs = []
    for t in range(5):
        x_t = Tensor(np.ascontiguousarray(seq.data[:, :, t]))
        h, _, _, _ = gru_step(p, x_t, h)
        outs.append(h.data)
    composed = np.stack(outs, axis=2)
    assert np.allclose(fused.data, composed, atol=1e-12)


def test_gru_layer_single_step_equals_gru_step():
    p = GruParams.init(Prng(6), 2, 3, dtype=np.float64)
    seq = Tensor(np.random.default_rng(6).normal(size=(4, 2, 1)))
    fused = gru_layer_forward(p, seq)
    h, _, _, _ = gru_step(p, Tensor(seq.data[:, :, 0]), Tensor(np.zeros((4, 3))))
    assert np.allclose(fused.data[:, :, 0], h.data)


def test_gru_layer_batch_independence():
    p = GruParams.init(Prng(7), 2, 3, dtype=np.float64)
    rng = np.random.default_rng(7)
    a = rng.normal(size=(1, 2, 6))
    b = rng.normal(size=(1, 2, 6))
    both = gru_layer_forward(p, Tensor(np.concatenate([a, b], axis=0)))
    one = gru_layer_forward(p, Tensor(a))
    two = gru_layer_forward(p, Tensor(b))
    assert np.allclose(both.data[0], one.data[0])
    assert np.allclose(both.data[1], two.data[0])


def test_gru_layer_errors():
    p = GruParams.init(Prng(8), 2, 3)
    with pytest.raises(DataError):
        gru_layer_forward(p, Tensor(np.zeros((1, 2, 0), dtype=np.float32)))
    with pytest.raises(ShapeError):
        gru_layer_forward(p, Tensor(np.zeros((1, 5, 4), dtype=np.float32)))
    with pytest.raises(ShapeError):
        gru_layer_forward(p, Tensor(np.zeros((2, 2), dtype=np.float32)))


def test_gru_layer_zero_params_zero_output():
    p = GruParams.zeros(2, 3)
    seq = Tensor(np.random.default_rng(8).normal(size=(2, 2, 4)))
    assert np.all(gru_layer_forward(p, seq).data == 0.0)


# ---------------------------------------------------------------------------
# convolution


def test_conv_output_length_law():
    assert conv1d_output_length(15000, 2) == 7500
    assert conv1d_output_length(7, 2) == 4
    assert conv1d_output_length(1, 3) == 1
    for length in range(1, 40):
        for stride in range(1, 5):
            assert conv1d_output_length(length, stride) == int(np.ceil(length / stride))


def test_conv_identity_kernel():
    p = ConvParams(Tensor(np.ones((1, 1, 1))), Tensor(np.zeros(1)), 1)
    seq = Tensor(np.abs(np.random.default_rng(9).normal(size=(2, 1, 6))))
    out = conv1d_forward(p, seq)
    assert np.allclose(out.data, seq.data)  # positive input passes ReLU untouched


def test_conv_hand_case_k2():
    # [1,2,3,4] with kernel [1,1], stride 1, same padding -> [3,5,7,4]
    p = ConvParams(Tensor(np.ones((1, 1, 2))), Tensor(np.zeros(1)), 1)
    out = conv1d_forward(p, Tensor([[[1.0, 2.0, 3.0, 4.0]]]))
    assert np.allclose(out.data, [[[3.0, 5.0, 7.0, 4.0]]])


def test_conv_matches_brute_force():
    rng = np.random.default_rng(10)
    p = ConvParams.init(Prng(11), 3, 4, 5, 2, dtype=np.float64)
    seq = rng.normal(size=(2, 3, 9))
    out = conv1d_forward(p, Tensor(seq))
    k = 5
    pad_left, pad_right = 2, 2
    padded = np.pad(seq, ((0, 0), (0, 0), (pad_left, pad_right)))
    t_out = conv1d_output_length(9, 2)
    expected = np.zeros((2, 4, t_out))
    for bi in range(2):
        for oc in range(4):
            for t in range(t_out):
                acc = 0.0
                for ic in range(3):
                    for j in range(k):
                        acc += padded[bi, ic, t * 2 + j] * p.kernels.data[oc, ic, j]
                expected[bi, oc, t] = max(acc + p.bias.data[oc], 0.0)
    assert np.allclose(out.data, expected, atol=1e-12)


def test_conv_channel_mismatch():
    p = ConvParams.init(Prng(12), 3, 4, 3, 1)
    with pytest.raises(ShapeError):
        conv1d_forward(p, Tensor(np.zeros((1, 2, 8), dtype=np.float32)))


def test_inception_concatenates_branches():
    prng = Prng(13)
    block = InceptionConvBlock([
        ConvParams.init(prng, 2, 3, k, 2, dtype=np.float64) for k in (2, 4, 8)
    ])
    seq = Tensor(np.random.default_rng(13).normal(size=(2, 2, 12)))
    out = inception_conv1d_forward(block, seq)
    assert out.shape == (2, 9, 6)
    parts = [conv1d_forward(br, seq) for br in block.branches]
    assert np.allclose(out.data, np.concatenate([p.data for p in parts], axis=1))


def test_inception_single_branch_is_plain_conv():
    p = ConvParams.init(Prng(14), 2, 3, 4, 2, dtype=np.float64)
    block = InceptionConvBlock([p])
    seq = Tensor(np.random.default_rng(14).normal(size=(1, 2, 10)))
    assert np.allclose(inception_conv1d_forward(block, seq).data,
                       conv1d_forward(p, seq).data)


def test_inception_rejects_mismatched_branches():
    prng = Prng(15)
    with pytest.raises(ConfigError):
        InceptionConvBlock([ConvParams.init(prng, 2, 3, 2, 1),
                            ConvParams.init(prng, 2, 3, 4, 2)])
    with pytest.raises(ConfigError):
        InceptionConvBlock([ConvParams.init(prng, 2, 3, 2, 1),
                            ConvParams.init(prng, 3, 3, 4, 1)])


# ---------------------------------------------------------------------------
# stacks and readout


def _stack(prng, widths, in_ch, dense):
    layers = []
    for k, w in enumerate(widths):
        if k == 0:
            size = in_ch
        elif dense:
            size = sum(widths[:k])
        else:
            size = widths[k - 1]
        layers.append(GruParams.init(prng, size, w, dtype=np.float64))
    return DenseGruStack(layers, dense=dense)


def test_dense_stack_output_and_widths():
    stack = _stack(Prng(16), [3, 4, 5], 2, dense=True)
    assert stack.layers[2].input_size == 7
    seq = Tensor(np.random.default_rng(16).normal(size=(2, 2, 6)))
    out = dense_gru_forward(stack, seq)
    assert out.shape == (2, 5, 6)


def test_chain_stack_matches_manual_composition():
    stack = _stack(Prng(17), [3, 4], 2, dense=False)
    seq = Tensor(np.random.default_rng(17).normal(size=(2, 2, 5)))
    out = dense_gru_forward(stack, seq)
    manual = gru_layer_forward(stack.layers[1], gru_layer_forward(stack.layers[0], seq))
    assert np.allclose(out.data, manual.data)


def test_single_layer_stack_is_gru_layer():
    stack = _stack(Prng(18), [4], 3, dense=True)
    seq = Tensor(np.random.default_rng(18).normal(size=(1, 3, 4)))
    assert np.allclose(dense_gru_forward(stack, seq).data,
                       gru_layer_forward(stack.layers[0], seq).data)


def test_stack_rejects_bad_wiring():
    prng = Prng(19)
    with pytest.raises(ConfigError):
        DenseGruStack([GruParams.init(prng, 2, 3), GruParams.init(prng, 5, 3)], dense=False)
    with pytest.raises(ConfigError):
        DenseGruStack([], dense=True)


def test_zero_param_stack_outputs_zero_any_wiring():
    for dense in (False, True):
        widths = [3, 3, 6] if dense else [3, 3, 3]
        layers = []
        for k, w in enumerate(widths):
            size = 2 if k == 0 else (sum(widths[:k]) if dense else widths[k - 1])
            layers.append(GruParams.zeros(size, w))
        stack = DenseGruStack(layers, dense=dense)
        seq = Tensor(np.random.default_rng(20).normal(size=(2, 2, 4)))
        assert np.all(dense_gru_forward(stack, seq).data == 0.0)


def test_connection_count():
    assert connection_count(4, dense=True) == 10  # L(L+1)/2 with the input counted
    assert connection_count(3, dense=True) == 6
    assert connection_count(1, dense=True) == 1
    assert connection_count(4, dense=False) == 4
    for L in range(1, 8):
        assert connection_count(L, dense=True) == L * (L + 1) // 2


def test_linear_forward_identity_and_oracle():
    x = Tensor(np.random.default_rng(21).normal(size=(3, 4)))
    eye = Tensor(np.eye(4))
    zero = Tensor(np.zeros(4))
    assert np.allclose(linear_forward(eye, zero, x).data, x.data)

    w = Tensor(np.random.default_rng(22).normal(size=(2, 4)))
    b = Tensor(np.random.default_rng(23).normal(size=(2,)))
    out = linear_forward(w, b, x)
    expected = np.zeros((3, 2))
    for i in range(3):
        for o in range(2):
            expected[i, o] = b.data[o] + sum(x.data[i, j] * w.data[o, j] for j in range(4))
    assert np.allclose(out.data, expected)
    with pytest.raises(ShapeError):
        linear_forward(w, b, Tensor(np.zeros((3, 5))))


def test_last_time_step():
    seq = Tensor(np.random.default_rng(24).normal(size=(2, 3, 5)))
    out = last_time_step(seq)
    assert out.shape == (2, 3)
    assert np.array_equal(out.data, seq.data[:, :, -1])


def test_fused_gru_gradient_matches_composed_path():
    # same loss through the fused layer and through per-step composition
    p = GruParams.init(Prng(25), 2, 3, dtype=np.float64)
    seq_data = np.random.default_rng(25).normal(size=(2, 2, 4))

    seq_fused = Tensor(seq_data.copy(), requires_grad=True)
    with Graph() as g1:
        loss1 = tsum(gru_layer_forward(p, seq_fused))
    g1_map = backward(loss1, g1)

    for _, t in p.tensors():
        t.zero_grad()
    seq_steps = Tensor(seq_data.copy(), requires_grad=True)
    with Graph() as g2:
        h = Tensor(np.zeros((2, 3)))
        total = None
        for t in range(4):
            from chrononet.tensor import slice_axis, reshape
            x_t = reshape(slice_axis(seq_steps, 2, t, t + 1), (2, 2))
            h, _, _, _ = gru_step(p, x_t, h)
            total = tsum(h) if total is None else __import__(
                "chrononet.tensor", fromlist=["add"]).add(total, tsum(h))
        loss2 = total
    g2_map = backward(loss2, g2)

    assert np.allclose(g1_map[seq_fused], g2_map[seq_steps], atol=1e-10)
    for name, t in p.tensors():
        assert np.allclose(g1_map[t], g2_map[t], atol=1e-10), name
