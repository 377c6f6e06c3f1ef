import numpy as np
import pytest
from scipy.special import expit

from bwmeta.errors import DataError
from bwmeta.neural import (
    ConcreteDropout,
    Dense,
    GaussianHead,
    LSTMCell,
    ParamStore,
    Tensor,
    adam_step,
    beta_nll_loss,
    concrete_mask,
    dense_backward,
    dense_forward,
    grad_check,
    lstm_sequence,
    lstm_step,
)
from bwmeta.neural import engine as E


def _dense(store, n_in, n_out, act="identity", seed=0):
    return Dense(store, "d", n_in, n_out, act, np.random.default_rng(seed))


def test_dense_zero():
    s = ParamStore()
    layer = _dense(s, 3, 2)
    layer.W.data[:] = 0.0
    assert np.all(dense_forward(layer, np.ones((4, 3))).data == 0.0)


def test_dense_hand_case():
    s = ParamStore()
    layer = _dense(s, 2, 2)
    layer.W.data[:] = [[1, 2], [3, 4]]
    layer.b.data[:] = [1, 1]
    assert np.array_equal(dense_forward(layer, np.array([1.0, 1.0])).data, [4.0, 8.0])


@pytest.mark.parametrize("act", ["identity", "tanh", "sigmoid"])
def test_dense_grad_check(act):
    s = ParamStore()
    layer = _dense(s, 7, 5, act, seed=1)
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(3, 7)), requires_grad=True)
    R = rng.normal(size=(3, 5))
    err = grad_check(lambda: E.tensor_sum(dense_forward(layer, x) * R), [x, layer.W, layer.b])
    assert err < 1e-6


def test_dense_backward_matches_closed_form():
    s = ParamStore()
    layer = _dense(s, 4, 3, seed=3)
    rng = np.random.default_rng(4)
    x, dy = rng.normal(size=(2, 4)), rng.normal(size=(2, 3))
    dx = dense_backward(layer, x, dy)
    assert np.allclose(dx, dy @ layer.W.data, atol=1e-14)
    assert np.allclose(layer.W.grad, dy.T @ x, atol=1e-14)
    assert np.allclose(layer.b.grad, dy.sum(axis=0), atol=1e-14)


def test_dense_width_mismatch():
    with pytest.raises(DataError):
        dense_forward(_dense(ParamStore(), 3, 2), np.ones((1, 4)))


def _cell(n_in, hidden, seed=0, store=None):
    return LSTMCell(store or ParamStore(), "c", n_in, hidden, np.random.default_rng(seed))


def test_lstm_zero_weights_give_zero_h():
    cell = _cell(2, 3)
    for p in (cell.Wx, cell.Wh, cell.b):
        p.data[:] = 0.0
    h, c = lstm_step(cell, np.ones((1, 2)), np.zeros((1, 3)), np.zeros((1, 3)))
    assert np.all(h.data == 0.0) and np.all(c.data == 0.0)


def test_lstm_scalar_hand_case():
    cell = _cell(1, 1)
    cell.Wx.data[:] = [[0.5, -0.3, 0.8, 0.2]]
    cell.Wh.data[:] = [[0.1, 0.2, -0.4, 0.3]]
    cell.b.data[:] = [0.0, 1.0, 0.1, -0.1]
    x, h0, c0 = 2.0, 0.5, -0.25
    i = expit(0.5 * x + 0.1 * h0)
    f = expit(-0.3 * x + 0.2 * h0 + 1.0)
    g = np.tanh(0.8 * x - 0.4 * h0 + 0.1)
    o = expit(0.2 * x + 0.3 * h0 - 0.1)
    c = f * c0 + i * g
    h = o * np.tanh(c)
    hs, cs = lstm_step(cell, np.array([[x]]), np.array([[h0]]), np.array([[c0]]))
    assert abs(hs.data[0, 0] - h) < 1e-15 and abs(cs.data[0, 0] - c) < 1e-15


def test_fused_sequence_equals_chained_steps():
    cell = _cell(3, 4, seed=5)
    x = np.random.default_rng(6).normal(size=(2, 5, 3))
    fused = lstm_sequence(cell, x).data
    h, c = np.zeros((2, 4)), np.zeros((2, 4))
    for k in range(5):
        h, c = lstm_step(cell, x[:, k], h, c)
        assert np.allclose(fused[:, k], h.data, atol=1e-14)


def test_lstm_bptt_grad_check():
    cell = _cell(2, 2, seed=7)
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(2, 3, 2)), requires_grad=True)
    R = rng.normal(size=(2, 3, 2))
    err = grad_check(lambda: E.tensor_sum(lstm_sequence(cell, x) * R), [x, cell.Wx, cell.Wh, cell.b])
    assert err < 1e-5


def test_two_layer_lstm_grad_check_four_steps():
    store = ParamStore()
    c1 = LSTMCell(store, "l0", 2, 3, np.random.default_rng(0))
    c2 = LSTMCell(store, "l1", 3, 3, np.random.default_rng(1))
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(2, 4, 2)), requires_grad=True)
    R = rng.normal(size=(2, 4, 3))
    err = grad_check(lambda: E.tensor_sum(lstm_sequence(c2, lstm_sequence(c1, x)) * R),
                     [x] + [p for _, p in store])
    assert err < 1e-5


def test_concrete_mask_limits_and_mean():
    store = ParamStore()
    d = ConcreteDropout(store, "d", init_p=0.5, temperature=0.1)
    rng = np.random.default_rng(10)
    m = concrete_mask(d, (100_000,), rng).data * (1 - d.p)  # undo the 1/(1-p) scaling
    assert abs(m.mean() - 0.5) < 0.02 * 0.5
    d.force_p(0.0)
    assert np.all(concrete_mask(d, (1000,), rng).data == 1.0)


def test_concrete_dropout_grad_check_fixed_noise():
    store = ParamStore()
    d = ConcreteDropout(store, "d", init_p=0.2, temperature=0.1)
    rng = np.random.default_rng(11)
    u = rng.uniform(size=(4, 3))
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    W = store.add("W", rng.normal(size=(3, 3)))
    err = grad_check(lambda: E.tensor_sum(x * concrete_mask(d, None, noise=u)) + d.regularization([W], 3),
                     [x, d.p_logit, W])
    assert err < 1e-5


def test_zero_regularisation_weights_give_zero_regulariser():
    store = ParamStore()
    d = ConcreteDropout(store, "d", weight_reg=0.0, dropout_reg=0.0)
    assert float(d.regularization([store.add("W", np.ones((2, 2)))], 2).data) == 0.0


def test_beta_nll_values():
    assert float(beta_nll_loss(np.array([1.0]), np.array([0.0]), np.array([0.0]), 0.5).data) == 0.5
    rng = np.random.default_rng(12)
    o, mu = rng.normal(size=10), rng.normal(size=10)
    for beta in (0.0, 0.5, 1.0):
        got = float(beta_nll_loss(o, mu, np.zeros(10), beta).data)
        assert abs(got - np.mean((o - mu) ** 2 / 2)) < 1e-15


def test_beta_zero_matches_standard_nll_gradient():
    rng = np.random.default_rng(13)
    o = rng.normal(size=(3, 4))
    mu = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    lv = Tensor(rng.normal(size=(3, 4)) * 0.5, requires_grad=True)
    beta_nll_loss(o, mu, lv, 0.0).backward()
    N = o.size
    var = np.exp(lv.data)
    assert np.allclose(mu.grad, -(o - mu.data) / var / N, atol=1e-14)
    assert np.allclose(lv.grad, (0.5 - (o - mu.data) ** 2 / (2 * var)) / N, atol=1e-14)
    mu.grad = lv.grad = None
    assert grad_check(lambda: beta_nll_loss(o, mu, lv, 0.0), [mu, lv]) < 1e-5


def test_beta_weights_are_gradient_stopped():
    rng = np.random.default_rng(14)
    o = rng.normal(size=5)
    mu = Tensor(rng.normal(size=5), requires_grad=True)
    lv = Tensor(rng.normal(size=5), requires_grad=True)
    beta_nll_loss(o, mu, lv, 0.5).backward()
    w = np.exp(0.5 * lv.data)
    assert np.allclose(mu.grad, -w * (o - mu.data) / np.exp(lv.data) / 5, atol=1e-14)


def test_gaussian_head_end_to_end_grad_check():
    store = ParamStore()
    head = GaussianHead(store, "h", 4, 3, 2, np.random.default_rng(15))
    rng = np.random.default_rng(16)
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    o = rng.normal(size=(2, 3, 2))
    with E.no_grad():
        w = np.exp(0.5 * head(x)[1].data)  # frozen beta weights: exact objective for differencing
    err = grad_check(lambda: beta_nll_loss(o, *head(x), 0.5, weights=w), [x] + [p for _, p in store])
    assert err < 1e-5


def test_gaussian_head_clamps_and_counts():
    store = ParamStore()
    head = GaussianHead(store, "h", 2, 2, 1, np.random.default_rng(0))
    head.logvar.b.data[:] = 50.0
    _, lv = head(np.zeros((3, 2)))
    assert np.all(lv.data == 10.0)
    assert head.clamp_events == 3
    assert np.all(np.exp(lv.data) > 0)


def test_adam_hand_step_and_zero_grad():
    store = ParamStore()
    p = store.add("p", np.array([0.0]))
    q = store.add("q", np.array([2.0]))
    p.grad = np.array([1.0])
    q.grad = np.zeros(1)
    adam_step(store, lr=0.1)
    assert abs(p.data[0] + 0.1) < 1e-8
    assert q.data[0] == 2.0


def test_adam_deterministic():
    stores = []
    for _ in range(2):
        s = ParamStore()
        s.add("w", np.arange(4.0))
        for step in range(3):
            s["w"].grad = np.sin(np.arange(4.0) + step)
            adam_step(s, 0.01)
        stores.append(s)
    assert stores[0]["w"].data.tobytes() == stores[1]["w"].data.tobytes()


def test_blob_round_trip():
    s = ParamStore()
    s.add("a.W", np.random.default_rng(0).normal(size=(3, 2)))
    s.add("b", np.array([1.5]))
    blob = s.to_bytes()
    assert blob[:4] == b"BWPS"
    back = ParamStore.parse_bytes(blob)
    assert list(back) == ["a.W", "b"]
    assert np.array_equal(back["a.W"], s["a.W"].data)
    with pytest.raises(DataError):
        ParamStore.parse_bytes(blob[:-3])
    with pytest.raises(DataError):
        ParamStore.parse_bytes(b"XXXX" + blob[4:])


def test_grad_clip():
    s = ParamStore()
    p = s.add("p", np.zeros(2))
    p.grad = np.array([3.0, 4.0])
    assert s.clip_grad_norm(1.0) == 5.0
    assert np.allclose(p.grad, [0.6, 0.8])


def test_engine_broadcast_grad():
    a = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    b = Tensor(np.random.default_rng(1).normal(size=(4,)), requires_grad=True)
    err = grad_check(lambda: E.tensor_sum(E.exp(a * b) / (1.0 + E.tanh(a - b) ** 2)), [a, b])
    assert err < 1e-6
