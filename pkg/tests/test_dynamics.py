import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamrom.dynamics import (
    FfnnModel,
    LstmModel,
    NasFailed,
    NasReport,
    NasTrial,
    build_ffnn,
    build_lstm,
    build_windows,
    ffnn_inputs,
    lstm_cell_step,
    lstm_predict,
    nas_search,
    select_winner,
    series_from_windows,
    split_gates,
    train_ffnn,
    train_lstm,
)
from streamrom.nn.gradcheck import grad_check


def hand_unrolled_cell(x, h_prev, c_prev, Wi, Wf, Wc, Wo, bi, bf, bc, bo):
    """Scalar-loop oracle for one LSTM step with gates acting on [h_prev, x]."""
    H = h_prev.size
    z = list(h_prev) + list(x)
    sig = lambda a: 1.0 / (1.0 + math.exp(-a))
    h = np.empty(H)
    c = np.empty(H)
    for r in range(H):
        ai = bi[r] + sum(Wi[r, k] * z[k] for k in range(len(z)))
        af = bf[r] + sum(Wf[r, k] * z[k] for k in range(len(z)))
        ac = bc[r] + sum(Wc[r, k] * z[k] for k in range(len(z)))
        ao = bo[r] + sum(Wo[r, k] * z[k] for k in range(len(z)))
        f = sig(af)
        i = sig(ai)
        c_tilde = math.tanh(ac)
        c[r] = f * c_prev[r] + i * c_tilde
        o = sig(ao)
        h[r] = o * math.tanh(c[r])
    return h, c


def random_gate_weights(rng, H, D, scale=1.0):
    W = rng.normal(scale=scale, size=(4 * H, H + D))
    b = rng.normal(scale=scale, size=4 * H)
    return W, b, split_gates(W, b)


# --------------------------------------------------------------------------- windows

def test_window_counts():
    z = np.random.default_rng(0).normal(size=(2, 75, 4))
    ds = build_windows(z, [[1.0, 2.0], [3.0, 4.0]], 10)
    assert ds.window_count == 65 and len(ds) == 130
    assert ds.inputs.shape == (130, 10, 6)


def test_single_window():
    z = np.random.default_rng(1).normal(size=(1, 4, 2))
    ds = build_windows(z, [[5.0]], 3)
    assert len(ds) == 1
    np.testing.assert_array_equal(ds.inputs[0, :, :2], z[0, :3])
    np.testing.assert_array_equal(ds.inputs[0, :, 2], 5.0)
    np.testing.assert_array_equal(ds.targets[0], z[0, 3])


def test_window_errors():
    with pytest.raises(ValueError):
        build_windows(np.zeros((1, 5, 2)), [[0.0]], 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(2, 12), st.integers(1, 4), st.integers(0, 2**31))
def test_windows_round_trip(m, nt, q, seed):
    w = max(1, nt // 3)
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(m, nt, q))
    ds = build_windows(z, rng.normal(size=(m, 2)), w)
    assert ds.window_count == nt - w
    np.testing.assert_array_equal(series_from_windows(ds, q), z)


# --------------------------------------------------------------------------- LSTM cell

def test_cell_zero_weights():
    _, _, w = random_gate_weights(np.random.default_rng(0), 3, 2, scale=0.0)
    h, c = lstm_cell_step(np.ones(2), np.zeros(3), np.zeros(3), w)
    np.testing.assert_array_equal(h, 0.0)
    np.testing.assert_array_equal(c, 0.0)


def test_cell_saturated_forget_gate_remembers():
    _, _, w = random_gate_weights(np.random.default_rng(0), 3, 2, scale=0.0)
    w["b_fo"][:] = 50.0
    c_prev = np.array([0.3, -1.2, 2.0])
    _, c = lstm_cell_step(np.ones(2), np.zeros(3), c_prev, w)
    np.testing.assert_allclose(c, c_prev, atol=1e-12)


def test_cell_matches_hand_unrolled_oracle():
    rng = np.random.default_rng(42)
    H, D = 5, 6
    W, b, w = random_gate_weights(rng, H, D)
    worst = 0.0
    for _ in range(100):
        x, h0, c0 = rng.normal(size=D), rng.normal(size=H), rng.normal(size=H)
        h, c = lstm_cell_step(x, h0, c0, w)
        ho, co = hand_unrolled_cell(x, h0, c0, w["W_in"], w["W_fo"], w["W_ca"], w["W_out"],
                                    w["b_in"], w["b_fo"], w["b_ca"], w["b_out"])
        worst = max(worst, np.max(np.abs(h - ho)), np.max(np.abs(c - co)))
    assert worst <= 1e-12


def test_cell_shape_mismatch():
    _, _, w = random_gate_weights(np.random.default_rng(0), 3, 2)
    with pytest.raises(ValueError):
        lstm_cell_step(np.ones(4), np.zeros(3), np.zeros(3), w)


def test_layer_forward_uses_cell_equations():
    model = build_lstm(2, 1, hidden=(3,), seed=7)
    layer = model.layers[0]
    X = np.random.default_rng(3).normal(size=(1, 4, 3))
    seq = layer.forward(X)
    h = c = np.zeros(3)
    w = layer.gate_weights()
    for t in range(4):
        h, c = lstm_cell_step(X[0, t], h, c, w)
        np.testing.assert_allclose(seq[0, t], h, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_gate_ranges(seed):
    rng = np.random.default_rng(seed)
    W, b, _ = random_gate_weights(rng, 4, 3, scale=3.0)
    H = 4
    a = np.concatenate([rng.normal(size=H), rng.normal(size=3)]) @ W.T + b
    sig = 1 / (1 + np.exp(-a))
    for k in (0, 1, 3):
        g = sig[k * H:(k + 1) * H]
        assert np.all((g >= 0) & (g <= 1))
    assert np.all(np.abs(np.tanh(a[2 * H:3 * H])) <= 1)


# --------------------------------------------------------------------------- LSTM model

def test_zero_weight_model_outputs_head_bias():
    model = build_lstm(4, 2, hidden=(5, 5), seed=0)
    for _, p, _ in model.named_parameters():
        p[...] = 0.0
    model.head.params["b"][:] = [1.0, 2.0, 3.0, 4.0]
    out = lstm_predict(model, np.random.default_rng(0).normal(size=(10, 6)))
    np.testing.assert_array_equal(out, [1.0, 2.0, 3.0, 4.0])


def test_cd_lstm_shapes():
    model = build_lstm(4, 2)
    assert model.hidden_sizes == (50, 50, 50)
    assert lstm_predict(model, np.zeros((10, 6))).shape == (4,)
    with pytest.raises(ValueError):
        lstm_predict(model, np.zeros((10, 5)))


def test_batch_packing_invariance():
    model = build_lstm(3, 2, hidden=(6, 4), seed=1)
    X = np.random.default_rng(1).normal(size=(7, 5, 5))
    batched = lstm_predict(model, X)
    single = np.stack([lstm_predict(model, x) for x in X])
    np.testing.assert_allclose(batched, single, atol=1e-12)


@pytest.mark.parametrize("head", ["linear", "softmax"])
def test_bptt_gradient(head):
    rng = np.random.default_rng(0)
    model = LstmModel(3, (2,), 2, head, seed=0)
    for _, p, _ in model.named_parameters():
        p[...] = rng.normal(scale=0.7, size=p.shape)
    X = rng.normal(size=(4, 3, 3))
    assert grad_check(model, X, rng.uniform(size=(4, 2))) <= 1e-5


def test_stacked_bptt_gradient():
    rng = np.random.default_rng(1)
    model = build_lstm(2, 2, hidden=(3, 4), seed=2)
    for _, p, _ in model.named_parameters():
        p[...] = rng.normal(scale=0.5, size=p.shape)
    assert grad_check(model, rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 2))) <= 1e-5


def test_constant_series_learned():
    z = np.full((2, 12, 2), 0.4)
    ds = build_windows(z, [[0.2], [0.8]], 3)
    model = build_lstm(2, 1, hidden=(4,), seed=0)
    hist = train_lstm(model, ds, epochs=300, batch_size=6, lr=1e-2, seed=0, val_fraction=0.0)
    assert len(hist) == 300
    assert hist.train_loss[-1] <= 1e-8


def test_empty_lstm_dataset():
    ds = build_windows(np.zeros((1, 3, 1)), [[0.0]], 2)
    ds.inputs, ds.targets = ds.inputs[:0], ds.targets[:0]
    with pytest.raises(ValueError):
        train_lstm(build_lstm(1, 1, (2,)), ds, epochs=1)


def test_lstm_config_round_trip():
    m = build_lstm(4, 2, hidden=(5, 3), head_activation="softmax", seed=3)
    clone = LstmModel.from_config(m.config())
    clone.load_state_dict(m.state_dict())
    X = np.random.default_rng(0).normal(size=(2, 4, 6))
    np.testing.assert_array_equal(clone.forward(X), m.forward(X))


# --------------------------------------------------------------------------- FFNN

def test_ffnn_input_layout():
    x = ffnn_inputs([0.1, 0.2], [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(x, [[0.1, 1, 2], [0.2, 1, 2], [0.1, 3, 4], [0.2, 3, 4]])
    assert build_ffnn(2, 4).n_in == 3


def test_ffnn_single_pair_interpolated():
    model = build_ffnn(2, 3, hidden=(8,), seed=0)
    x = np.array([[0.5, 0.2, 0.7]])
    y = np.array([[0.1, 0.9, 0.4]])
    hist = train_ffnn(model, x, y, epochs=500, batch_size=1, lr=1e-2, seed=0)
    assert hist.train_loss[-1] <= 1e-8


@pytest.mark.parametrize("name", ["sigmoid", "leaky_relu", "relu", "elu", "swish"])
def test_ffnn_gradient(name):
    rng = np.random.default_rng(2)
    model = FfnnModel(3, 4, (6,), name, seed=1)
    for _, p, _ in model.named_parameters():
        p[...] = rng.normal(scale=0.5, size=p.shape)
    assert grad_check(model, rng.normal(size=(5, 3)), rng.normal(size=(5, 4))) <= 1e-5


# --------------------------------------------------------------------------- NAS

def _toy_ffnn_data():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(30, 3))
    y = np.column_stack([np.sin(3 * x[:, 0]) + x[:, 1], x[:, 2] ** 2])
    return x, y


def test_nas_single_candidate():
    x, y = _toy_ffnn_data()
    rep = nas_search(["elu"], x, y, hidden=(4,), epochs=3, batch_size=4, lr=0.01)
    assert rep.winner == "elu"


def test_nas_winner_is_argmin(tmp_path):
    x, y = _toy_ffnn_data()
    rep = nas_search(["sigmoid", "leaky_relu", "relu", "elu", "swish"], x, y, hidden=(6,), epochs=10,
                     batch_size=4, lr=0.02, seed=1)
    vals = [t.val_loss for t in rep.trials]
    assert len(rep.trials) == 5
    assert rep.winner == rep.trials[int(np.argmin(vals))].activation
    rep.to_csv(tmp_path / "nas.csv")
    rows = list(csv.DictReader(open(tmp_path / "nas.csv")))
    assert [r["activation"] for r in rows] == ["sigmoid", "leaky_relu", "relu", "elu", "swish"]
    assert sum(int(r["winner"]) for r in rows) == 1


def test_winner_tie_breaking():
    trials = [NasTrial("a", 2.0, 1.0), NasTrial("b", 1.0, 1.0), NasTrial("c", 1.0, 1.0), NasTrial("d", 0.0, 3.0)]
    assert select_winner(trials) == "b"
    assert select_winner([NasTrial("x", float("nan"), float("nan"), diverged=True), NasTrial("y", 5, 5)]) == "y"


@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=6))
def test_winner_pure_function_of_losses(losses):
    trials = [NasTrial(f"c{k}", tr, va) for k, (tr, va) in enumerate(losses)]
    expected = min(range(len(losses)), key=lambda k: (losses[k][1], losses[k][0], k))
    assert select_winner(trials) == f"c{expected}"
    assert NasReport(trials).winner == select_winner(trials)


def test_nas_all_diverged():
    x = np.ones((4, 3))
    y = np.full((4, 2), np.nan)
    with pytest.raises(NasFailed, match="sigmoid"):
        nas_search(["sigmoid", "relu"], x, y, hidden=(2,), epochs=1, batch_size=2, lr=0.1)
