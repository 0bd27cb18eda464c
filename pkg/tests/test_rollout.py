import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfbench import classical, gp
from cfbench.errors import DivergedToNonFinite
from cfbench.evaluation import evaluate_rollout, rmse
from cfbench.rollout import rollout_classical, rollout_predictor, step_ballistic, transform_prediction
from cfbench.trajectory import derive_kinematics, features, split, target_series

from conftest import IDM_EXAMPLE, make_traj


class TestStepBallistic:
    @pytest.mark.parametrize("v,a,expected", [(10, 0, (10, 1.0)), (10, 2, (10.2, 1.01)), (0, 0, (0, 0))])
    def test_examples(self, v, a, expected):
        v_next, dx = step_ballistic(v, a, 0.1)
        assert v_next == pytest.approx(expected[0], abs=1e-12)
        assert dx == pytest.approx(expected[1], abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(v0=st.floats(0, 40), a=st.floats(-3, 3), x0=st.floats(-100, 100))
    def test_constant_acceleration_exact(self, v0, a, x0):
        dt, n = 0.1, 1000
        x, v = x0, v0
        for _ in range(n):
            v, dx = step_ballistic(v, a, dt)
            x += dx
        T = n * dt
        exact = x0 + v0 * T + a * T**2 / 2
        assert abs(x - exact) <= 1e-12 * max(1.0, abs(exact))


class TestTransformPrediction:
    def test_target_a(self):
        x, v, a, s = transform_prediction("a", 0.0, (0.0, 10.0, 0.0, 20.0), (26.0, 10.0), 0.1, 5.0)
        assert v == 10.0 and x == pytest.approx(1.0) and a == 0.0
        assert s == pytest.approx(26.0 - 5.0 - 1.0)

    def test_target_v(self):
        x, v, a, s = transform_prediction("v", 10.2, (0.0, 10.0, 0.0, 20.0), (26.0, 10.0), 0.1, 5.0)
        assert a == pytest.approx(2.0) and x == pytest.approx(1.01)

    def test_target_s_static(self):
        x, v, a, s = transform_prediction("s", 20.0, (0.0, 0.0, 0.0, 20.0), (25.0, 0.0), 0.1, 5.0)
        assert (x, v, a, s) == pytest.approx((0.0, 0.0, 0.0, 20.0))


class TestRolloutClassical:
    def test_zero_dynamics(self):
        traj = make_traj(np.full(50, 10.0))
        sim = rollout_classical(lambda st_: 0.0 * st_.v, traj)
        np.testing.assert_allclose(sim.s, traj.spacing[0], atol=1e-12)
        np.testing.assert_allclose(sim.v, 10.0)

    def test_self_consistency(self, idm_sinus):
        sim = rollout_classical(classical.accel_function("IDM", IDM_EXAMPLE), idm_sinus)
        score = evaluate_rollout(sim, idm_sinus)
        assert max(score.a, score.v, score.s) <= 1e-9
        assert np.max(np.abs(sim.x - idm_sinus.x_follower)) <= 1e-9

    def test_collision_truncates(self):
        traj = make_traj(np.full(100, 10.0), gap=3.0)
        sim = rollout_classical(lambda st_: 0.0 * st_.v + 5.0, traj)
        assert sim.collision
        assert len(sim) == sim.collision_step + 1
        assert sim.s[-1] <= 0 and np.all(sim.s[:-1] > 0)

    def test_speed_clamped(self):
        traj = make_traj(np.full(100, 1.0), gap=50.0)
        sim = rollout_classical(lambda st_: 0.0 * st_.v - 5.0, traj)
        assert sim.v.min() >= 0.0


def oracle_predictor(traj, target):
    truth = target_series(traj, target)
    feats = features(traj)
    lookup = {feats[k].tobytes(): truth[k] for k in range(len(truth))}
    return lambda win: lookup[win[-1].tobytes()]


class TestRolloutPredictor:
    @pytest.mark.parametrize("target", ["a", "v"])
    def test_oracle_reproduces_truth(self, idm_short, target):
        sim = rollout_predictor(oracle_predictor(idm_short, target), target, idm_short)
        score = evaluate_rollout(sim, idm_short)
        assert max(score.a, score.v, score.s) <= 1e-9

    def test_oracle_spacing_target(self, idm_short):
        # backward-difference speeds: x and s are exact, v is the mean of consecutive true speeds
        truth = iter(target_series(idm_short, "s"))
        sim = rollout_predictor(lambda win: next(truth), "s", idm_short)
        assert np.max(np.abs(sim.s - idm_short.spacing)) <= 1e-9
        assert np.max(np.abs(sim.x - idm_short.x_follower)) <= 1e-9
        vf = idm_short.v_follower
        assert np.max(np.abs(sim.v[1:] - (vf[1:] + vf[:-1]) / 2)) <= 1e-9

    def test_oracle_with_window_and_history(self, idm_sinus):
        train, test = split(idm_sinus)
        truth = target_series(idm_sinus, "v")
        feats = features(idm_sinus)
        lookup = {feats[k].tobytes(): truth[k] for k in range(len(truth))}
        calls = []

        def predict(win):
            calls.append(win.shape)
            return lookup[win[-1].tobytes()]

        sim = rollout_predictor(predict, "v", test, window=5, history=train)
        assert calls[0] == (5, 3) and len(calls) == len(test) - 1
        assert rmse(sim.v, test.v_follower) <= 1e-9

    def test_zero_accel_constant_gap(self):
        traj = make_traj(np.full(30, 8.0))
        sim = rollout_predictor(lambda win: 0.0, "a", traj)
        np.testing.assert_allclose(sim.s, traj.spacing[0], atol=1e-12)

    def test_divergence_truncates_or_raises(self):
        traj = make_traj(np.full(40, 8.0), gap=50.0)
        sim = rollout_predictor(lambda win: -1e12 if win[-1, 0] < 7 else -5.0, "a", traj)
        assert sim.diverged and np.all(np.isfinite(sim.v))
        with pytest.raises(DivergedToNonFinite):
            rollout_predictor(lambda win: float("nan"), "a", traj, on_divergence="raise")

    def test_gp_rollout_is_stable(self, idm_sinus):
        train, test = split(idm_sinus)
        X, y = features(train)[:-1], target_series(train, "a")
        model = gp.optimize_hyperparams(X[::4], y[::4], "Matern52", restarts=2, seed=0)
        sim = rollout_predictor(lambda w: gp.predict_mean(model, w[-1:])[0], "a", test)
        assert not sim.diverged and np.all(np.isfinite(sim.v))
        # one-step speed error: predicted a integrated from the recorded state
        Xt = features(test)[:-1]
        v_one = test.v_follower[:-1] + gp.predict_mean(model, Xt) * test.dt
        one_step = rmse(v_one, test.v_follower[1:])
        assert evaluate_rollout(sim, test).v <= 10 * one_step
