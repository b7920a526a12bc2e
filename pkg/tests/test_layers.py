import numpy as np
import pytest
from hypothesis import given, strategies as st

import moodseq.tensor as T
from moodseq.gradcheck import check_model
from moodseq.layers import (BatchNorm, BiLSTM, ConfigError, Dense, Dropout, Embedding, LSTM, Module,
                            PROPOSED_TCNN, TcnnBlock, TcnnBlockConfig, global_average_pool_time, param,
                            lstm_step, pooled_width, run_bilstm, run_lstm, tcnn_block)
from moodseq.tensor import DimensionError, Tensor


def zero_lstm(n_in, hidden):
    m = LSTM(n_in, hidden, np.random.default_rng(0), forget_bias=0.0)
    for p in (m.W, m.U, m.b):
        p.data[:] = 0
    return m


def test_lstm_zero_params_give_zero_state():
    m = zero_lstm(3, 4)
    h, c = lstm_step(m, Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))))
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_forget_bias_initialised_to_one():
    m = LSTM(3, 5, np.random.default_rng(0))
    np.testing.assert_array_equal(m.gate_block("b", "f"), 1.0)
    for g in "iog":
        np.testing.assert_array_equal(m.gate_block("b", g), 0.0)


def test_saturated_gates_preserve_memory():
    m = zero_lstm(2, 3)
    H = 3
    m.b.data[H:2 * H] = 50.0    # forget -> 1
    m.b.data[0:H] = -50.0       # input -> 0
    c_prev = Tensor(np.array([[0.3, -1.2, 2.0]], dtype=np.float32))
    _, c = m.step(Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 3))), c_prev)
    np.testing.assert_allclose(c.data, c_prev.data, atol=1e-6)


def test_gate_dimension_error_names_gates():
    m = LSTM(3, 4, np.random.default_rng(0))
    with pytest.raises(DimensionError, match="W_i"):
        m(Tensor(np.ones((2, 5))))
    with pytest.raises(DimensionError, match="U_i"):
        m.step(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 4))))


def test_run_lstm_consistency():
    rng = np.random.default_rng(1)
    m = LSTM(3, 4, rng)
    x = Tensor(rng.normal(size=(6, 3)))
    full = run_lstm(m, x, return_all=True)
    last = run_lstm(m, x, return_all=False)
    assert full.shape == (6, 4)
    np.testing.assert_array_equal(full.data[-1], last.data)
    one = run_lstm(m, x[:1], return_all=False)
    h, _ = lstm_step(m, x[:1], Tensor(np.zeros((1, 4), np.float32)), Tensor(np.zeros((1, 4), np.float32)))
    np.testing.assert_allclose(one.data, h.data[0], rtol=1e-6)


def test_run_lstm_empty_sequence():
    m = LSTM(3, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        m(Tensor(np.zeros((0, 3))))


def test_constant_input_without_recurrence_repeats_state():
    m = LSTM(3, 4, np.random.default_rng(0))
    m.U.data[:] = 0
    # c_t still accumulates through f*c_prev; sever it too so h_t is a pure function of x_t
    m.b.data[4:8] = -50.0
    out = m(Tensor(np.tile([0.2, -0.1, 0.5], (5, 1))))
    for t in range(1, 5):
        np.testing.assert_allclose(out.data[t], out.data[0], atol=1e-6)


def test_bilstm_width_and_symmetry():
    rng = np.random.default_rng(2)
    fwd = LSTM(2, 73, rng)
    bi = BiLSTM(2, 73, rng, fwd=fwd, bwd=fwd)
    seq = rng.normal(size=(5, 2))
    pal = np.concatenate([seq, seq[::-1][1:]])   # length 9 palindrome
    out = bi(Tensor(pal)).data
    assert out.shape == (9, 146)
    for t in range(9):
        np.testing.assert_allclose(out[t, :73], out[8 - t, 73:], atol=1e-6)


def test_bilstm_zero_backward():
    rng = np.random.default_rng(3)
    fwd = LSTM(2, 4, rng)
    bwd = zero_lstm(2, 4)
    x = Tensor(rng.normal(size=(6, 2)))
    out = run_bilstm(fwd, bwd, x).data
    np.testing.assert_array_equal(out[:, 4:], 0)
    np.testing.assert_array_equal(out[:, :4], fwd(x).data)


def test_bilstm_hidden_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        run_bilstm(LSTM(2, 3, rng), LSTM(2, 4, rng), Tensor(np.ones((3, 2))))


@given(st.integers(1, 40))
def test_lstm_state_bounds(steps):
    rng = np.random.default_rng(steps)
    m = LSTM(2, 3, rng)
    m.b.data[:] = 30.0      # every gate saturated open
    h, c = Tensor(np.zeros((1, 3), np.float32)), Tensor(np.zeros((1, 3), np.float32))
    x = rng.normal(size=(steps, 1, 2)) * 5
    for t in range(steps):
        h, c = m.step(Tensor(x[t]), h, c)
        assert np.all(np.abs(c.data) <= (t + 1) + 1e-5)
        assert np.all(np.abs(h.data) <= 1.0)


def test_tcnn_identity_block():
    blk = TcnnBlock(1, TcnnBlockConfig(1, 1, 1), np.random.default_rng(0))
    blk.kernel.data[:] = 1.0
    blk.eval()
    x = np.random.default_rng(1).normal(size=(4, 7, 1)).astype(np.float32)
    # running stats are mean 0 var 1: batch norm is identity up to eps
    np.testing.assert_allclose(tcnn_block(blk, Tensor(x)).data, x / np.sqrt(1 + 1e-5), rtol=1e-6)


def test_tcnn_time_equivariance_in_inference():
    rng = np.random.default_rng(4)
    blk = TcnnBlock(2, TcnnBlockConfig(3, 3, 2), rng)
    blk.bn.running_mean.data[:] = rng.normal(size=3)
    blk.bn.running_var.data[:] = rng.uniform(0.5, 2, size=3)
    blk.eval()
    x = rng.normal(size=(6, 9, 2)).astype(np.float32)
    perm = rng.permutation(6)
    np.testing.assert_array_equal(blk(Tensor(x[perm])).data, blk(Tensor(x)).data[perm])


def test_tcnn_proposed_stack_shape():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 146, 1)).astype(np.float32))
    c = 1
    for cfg in PROPOSED_TCNN:
        x = TcnnBlock(c, cfg, rng)(x)
        c = cfg.kernel_count
    assert x.shape == (4, 5, 256)
    assert pooled_width(146, PROPOSED_TCNN) == 5
    assert [b.kernel_count for b in PROPOSED_TCNN] == [64, 64, 64, 128, 256]
    assert [b.kernel_size for b in PROPOSED_TCNN] == [3, 3, 3, 3, 9]


def test_tcnn_bad_config():
    with pytest.raises(ConfigError):
        TcnnBlockConfig(0, 3)
    with pytest.raises(ConfigError):
        TcnnBlock(1, TcnnBlockConfig(2, 3), np.random.default_rng(0), pool_mode="median")


def test_global_average_pool_time():
    v = np.arange(6, dtype=np.float32).reshape(1, 3, 2)
    np.testing.assert_array_equal(global_average_pool_time(Tensor(v)).data, v.reshape(-1))
    two = np.concatenate([v, -v])
    np.testing.assert_array_equal(global_average_pool_time(Tensor(two)).data, 0)
    r = np.random.default_rng(0).normal(size=(5, 3, 2))
    np.testing.assert_allclose(global_average_pool_time(Tensor(r[::-1].copy())).data,
                               global_average_pool_time(Tensor(r)).data, atol=1e-12)


def test_dropout_identity_in_eval_and_expectation():
    d = Dropout(0.2, np.random.default_rng(0))
    x = Tensor(np.linspace(-1, 1, 50).astype(np.float64))
    d.eval()
    assert d(x) is x
    d.train()
    with T.precision("float64"):
        mean = np.mean([d(x).data for _ in range(10_000)], axis=0)
    np.testing.assert_allclose(mean, x.data, atol=0.02 * np.abs(x.data).max())


def test_dropout_rate_validation():
    with pytest.raises(ConfigError):
        Dropout(1.0)


def test_batch_norm_constant_batch_and_running_stats():
    bn = BatchNorm(3)
    y = bn(Tensor(np.full((8, 3), 2.5, np.float32)))
    np.testing.assert_allclose(y.data, 0, atol=1e-3)
    np.testing.assert_allclose(bn.running_mean.data, 0.1 * 2.5, rtol=1e-6)
    bn.eval()
    np.testing.assert_allclose(bn(Tensor(np.full((2, 3), 0.25, np.float32))).data, 0, atol=1e-3)


def test_embedding_padding_frozen_and_range():
    table = np.vstack([np.zeros(4), np.random.default_rng(0).normal(size=(3, 4))])
    emb = Embedding(table)
    np.testing.assert_array_equal(emb(np.array([0])).data, 0)
    assert not emb(np.array([1, 2])).requires_grad
    assert emb.parameters() == []
    with pytest.raises(IndexError):
        emb(np.array([4]))


def test_dense_affine():
    d = Dense(3, 2, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3)).astype(np.float32)
    np.testing.assert_allclose(d(Tensor(x)).data, x @ d.W.data + d.b.data, rtol=1e-6)


class _Stack(Module):
    def __init__(self, rng):
        self.lstm = BiLSTM(3, 4, rng, recurrent_dropout=0.2)
        self.block = TcnnBlock(1, TcnnBlockConfig(2, 3, 2), rng)
        self.dense = Dense(8, 2, rng, activation="tanh")
        self.drop = Dropout(0.2, rng)


@pytest.mark.parametrize("seed", range(10))
def test_layer_gradients(seed):
    with T.precision("float64"):
        rng = np.random.default_rng(seed)
        m = _Stack(rng)
        x = Tensor(rng.normal(size=(2, 5, 3)))

        def loss():
            h = m.lstm(x)                                   # (2, 5, 8)
            z = m.block(h.reshape(2, 5, 8, 1))               # (2, 5, 4, 2)
            z = global_average_pool_time(z)                  # (2, 8)
            return (m.dense(m.drop(z)) ** 2).sum()

        errs = check_model(m, loss, seed=seed)
        assert max(errs.values()) < 1e-4, errs


class _Kinked(Module):
    def __init__(self, w):
        self.w = param(np.array([w]))


def test_check_model_shrinks_step_across_relu_switch():
    # the pre-activation sits 3e-7 from the relu corner: a fixed 1e-6 probe would see slope 0.65
    with T.precision("float64"):
        m = _Kinked(3e-7)
        loss = lambda: T.relu(m.w).sum() * 2.0
        assert max(check_model(m, loss).values()) < 1e-6
        assert max(check_model(m, loss, min_eps=1e-6).values()) > 0.1
