import math

import numpy as np
import pytest

from cfbench import lstm
from cfbench.errors import ShapeMismatch, TooShort, ValidationError
from cfbench.lstm import LstmConfig, backward, cell_forward, forward, init_params, make_windows, train

from conftest import make_traj

SMALL = LstmConfig(layers=1, hidden=3, window=2, input_dim=3)


def scalar_cell(x, h, c, W_x, W_h, b_x, b_h):
    """Loop-by-loop LSTM cell used as an independent oracle."""
    H = len(h)
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))  # noqa: E731
    h_new, c_new = [], []
    for j in range(H):
        z = []
        for k in range(4):
            row = k * H + j
            acc = b_x[row] + b_h[row]
            acc += sum(W_x[row, m] * x[m] for m in range(len(x)))
            acc += sum(W_h[row, m] * h[m] for m in range(H))
            z.append(acc)
        i, f, g, o = sig(z[0]), sig(z[1]), math.tanh(z[2]), sig(z[3])
        cj = f * c[j] + i * g
        c_new.append(cj)
        h_new.append(o * math.tanh(cj))
    return np.array(h_new), np.array(c_new)


def fd_grad(X, y, params, h=1e-5):
    theta = params.to_vector()
    g = np.empty_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        lp = np.mean((forward(X, params.from_vector(theta + e)) - y) ** 2)
        lm = np.mean((forward(X, params.from_vector(theta - e)) - y) ** 2)
        g[k] = (lp - lm) / (2 * h)
    return g


class TestCell:
    def test_zero_params(self):
        p = lstm.zeros_like(init_params(SMALL))
        h, c, cache = cell_forward(np.ones((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)), p.layers[0])
        i, f, g, o = cache[3:7]
        assert np.all(i == 0.5) and np.all(f == 0.5) and np.all(o == 0.5) and np.all(g == 0)
        assert np.all(h == 0) and np.all(c == 0)

    def test_forget_half(self):
        p = lstm.zeros_like(init_params(SMALL))
        c_prev = np.array([[2.0, -1.0, 4.0]])
        _, c, _ = cell_forward(np.zeros((1, 3)), np.zeros((1, 3)), c_prev, p.layers[0])
        np.testing.assert_array_equal(c, 0.5 * c_prev)

    def test_matches_scalar_oracle(self, rng):
        p = init_params(LstmConfig(layers=1, hidden=4, input_dim=3, seed=9))
        layer = p.layers[0]
        x, h0, c0 = rng.normal(size=3), rng.normal(size=4), rng.normal(size=4)
        h, c, _ = cell_forward(x, h0, c0, layer)
        h_ref, c_ref = scalar_cell(x, h0, c0, layer.W_x, layer.W_h, layer.b_x, layer.b_h)
        assert np.max(np.abs(h[0] - h_ref)) <= 1e-12 and np.max(np.abs(c[0] - c_ref)) <= 1e-12

    def test_gate_names(self):
        p = init_params(SMALL)
        layer = p.layers[0]
        np.testing.assert_array_equal(layer.gate("W_hf"), layer.W_h[3:6])
        np.testing.assert_array_equal(layer.gate("b_io"), layer.b_x[9:12])

    def test_shape_mismatch(self):
        p = init_params(SMALL)
        with pytest.raises(ShapeMismatch):
            cell_forward(np.zeros((1, 4)), np.zeros((1, 3)), np.zeros((1, 3)), p.layers[0])


class TestForward:
    def test_zero_params_give_bias(self, rng):
        p = lstm.zeros_like(init_params(LstmConfig(layers=2, hidden=5)))
        p.head_b[0] = 0.7
        np.testing.assert_array_equal(forward(rng.normal(size=(6, 5, 3)), p), 0.7)

    def test_batch_invariance(self, rng):
        p = init_params(LstmConfig(layers=2, hidden=6, seed=2))
        X = rng.normal(size=(7, 5, 3))
        batch = forward(X, p)
        single = np.array([forward(X[k], p)[0] for k in range(7)])
        assert np.max(np.abs(batch - single)) <= 1e-12

    def test_sequence_order_matters(self, rng):
        p = init_params(LstmConfig(layers=1, hidden=6, seed=2))
        X = rng.normal(size=(5, 3))
        assert forward(X, p)[0] != forward(X[::-1], p)[0]

    def test_stacked_layers_oracle(self, rng):
        p = init_params(LstmConfig(layers=2, hidden=3, window=3, seed=4))
        X = rng.normal(size=(3, 3))
        seq = X
        for layer in p.layers:
            h, c, out = np.zeros(3), np.zeros(3), []
            for x in seq:
                h, c = scalar_cell(x, h, c, layer.W_x, layer.W_h, layer.b_x, layer.b_h)
                out.append(h)
            seq = out
        expected = float(seq[-1] @ p.head_w + p.head_b[0])
        assert forward(X, p)[0] == pytest.approx(expected, abs=1e-12)


class TestBackward:
    def test_matches_finite_differences(self, rng):
        p = init_params(SMALL, rng)
        X, y = rng.normal(size=(4, 2, 3)), rng.normal(size=4)
        grads, _ = backward(X, y, p)
        analytic, numeric = grads.to_vector(), fd_grad(X, y, p)
        offset = 0
        for name, t in p.tensors():
            a, n = analytic[offset:offset + t.size], numeric[offset:offset + t.size]
            offset += t.size
            assert np.max(np.abs(a - n)) / max(np.max(np.abs(n)), 1e-8) <= 1e-4, name

    def test_deep_network_gradient(self, rng):
        p = init_params(LstmConfig(layers=3, hidden=4, window=4), rng)
        X, y = rng.normal(size=(3, 4, 3)), rng.normal(size=3)
        grads, _ = backward(X, y, p)
        n = fd_grad(X, y, p)
        assert np.max(np.abs(grads.to_vector() - n)) / np.max(np.abs(n)) <= 1e-4

    def test_zero_residual(self, rng):
        p = init_params(SMALL, rng)
        X = rng.normal(size=(5, 2, 3))
        grads, loss = backward(X, forward(X, p), p)
        assert loss == 0 and np.all(grads.to_vector() == 0)

    def test_linear_in_residual(self, rng):
        p = init_params(SMALL, rng)
        X = rng.normal(size=(5, 2, 3))
        pred = forward(X, p)
        r = rng.normal(size=5)
        g1, _ = backward(X, pred - r, p)
        g2, _ = backward(X, pred - 2 * r, p)
        np.testing.assert_allclose(g2.to_vector(), 2 * g1.to_vector(), atol=1e-14)

    def test_mismatched_targets(self, rng):
        with pytest.raises(ShapeMismatch):
            backward(rng.normal(size=(3, 2, 3)), np.zeros(2), init_params(SMALL))


class TestTrain:
    def test_zero_learning_rate(self, rng):
        X, y = rng.normal(size=(10, 2, 3)), rng.normal(size=10)
        cfg = LstmConfig(layers=1, hidden=3, window=2, epochs=4, learning_rate=0.0, seed=1)
        res = train(X, y, cfg)
        np.testing.assert_array_equal(res.params.to_vector(), init_params(cfg).to_vector())
        assert len(res.loss_history) == 4 and len(set(res.loss_history)) == 1

    def test_deterministic(self, rng):
        X, y = rng.normal(size=(40, 3, 3)), rng.normal(size=40)
        cfg = LstmConfig(layers=2, hidden=4, window=3, epochs=3, seed=8)
        a, b = train(X, y, cfg), train(X, y, cfg)
        assert np.array_equal(a.params.to_vector(), b.params.to_vector())
        assert a.loss_history == b.loss_history

    def test_small_steps_decrease_loss(self, rng):
        X, y = rng.normal(size=(8, 2, 3)), rng.normal(size=8)
        cfg = LstmConfig(layers=1, hidden=4, window=2, epochs=10, learning_rate=1e-4, batch_size=8, seed=3)
        hist = train(X, y, cfg).loss_history
        assert all(b <= a for a, b in zip(hist, hist[1:]))

    def test_memorises_single_window(self):
        X = np.array([[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]])
        cfg = LstmConfig(layers=1, hidden=8, window=2, epochs=2000, learning_rate=0.05, seed=0)
        res = train(X, [0.7], cfg)
        assert res.loss_history[-1] <= 1e-4

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            LstmConfig(hidden=0)
        with pytest.raises(ValidationError):
            LstmConfig.from_dict({"hiden": 4})


class TestData:
    def test_window_count_and_labels(self):
        traj = make_traj(np.arange(7.0) + 10)
        X, y = make_windows(traj, "v", 5)
        assert X.shape == (2, 5, 3) and len(y) == 2
        np.testing.assert_array_equal(y, traj.v_follower[5:7])
        np.testing.assert_array_equal(X[1, :, 0], traj.v_follower[1:6])

    def test_too_short(self):
        with pytest.raises(TooShort):
            make_windows(make_traj(np.full(5, 10.0)), "a", 5)

    def test_standardisation_stats(self, idm_short):
        cfg = LstmConfig(layers=1, hidden=3, window=5, epochs=1)
        model = lstm.fit(idm_short, "s", cfg)
        X, y = make_windows(idm_short, "s", 5)
        Xs = model.standardizer.transform_x(X).reshape(-1, 3)
        np.testing.assert_allclose(Xs.mean(axis=0), 0, atol=1e-10)
        np.testing.assert_allclose(Xs.std(axis=0), 1, atol=1e-10)
        assert model.standardizer.y_mean == pytest.approx(y.mean())

    def test_save_load_bit_exact(self, tmp_path, rng):
        p = init_params(LstmConfig(layers=2, hidden=5), rng)
        lstm.save_params(p, tmp_path / "net")
        back = lstm.load_params(tmp_path / "net")
        assert back.to_vector().tobytes() == p.to_vector().tobytes()
        X = rng.normal(size=(3, 5, 3))
        assert np.array_equal(forward(X, back), forward(X, p))
        assert (tmp_path / "net.bin").stat().st_size == 8 * len(p.to_vector())
