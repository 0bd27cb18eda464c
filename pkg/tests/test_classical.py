import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfbench import classical
from cfbench.classical import (CfState, FvdmParams, GippsParams, IdmParams, fvdm_accel, fvdm_desired_speed,
                               gipps_accel, idm_accel)
from cfbench.errors import NonPositiveSpacing, UnknownModelKind

IDM = IdmParams(a_max=1.0, V_max=10.0, delta=4.0, s0=2.0, T=1.0, b=1.0)
GIPPS = GippsParams(a_max=2.0, V_max=10.0, tau=1.0, theta=0.5, b=3.0, b_hat=3.0, s0=2.0)
CTH = FvdmParams(K1=0.5, K2=0.3, V_max=10.0, s0=2.0, T=1.0, variant="CTH")
SIG = FvdmParams(K1=0.5, K2=0.3, V_max=10.0, s0=2.0, T=1.0, variant="SIGMOID")


def state(v, s, dv=0.0, v_leader=None):
    return CfState(v=v, s=s, dv=dv, v_leader=v - dv if v_leader is None else v_leader)


class TestIdm:
    def test_standstill_at_min_gap(self):
        assert idm_accel(state(0.0, 2.0), IDM) == pytest.approx(0.0, abs=1e-15)

    def test_free_flow(self):
        assert abs(idm_accel(state(10.0, 1e9), IDM)) < 1e-12

    def test_hand_value(self):
        assert idm_accel(state(5.0, 20.0), IDM) == pytest.approx(0.815, abs=1e-12)

    def test_approach_brakes_harder(self):
        closing = idm_accel(state(5.0, 20.0, dv=2.0), IDM)
        opening = idm_accel(state(5.0, 20.0, dv=-2.0), IDM)
        assert closing < 0.815 < opening

    def test_monotone_in_spacing(self):
        s = np.linspace(0.5, 100, 400)
        for v in (0.0, 5.0, 12.0):
            for dv in (-3.0, 0.0, 3.0):
                a = idm_accel(CfState(v=np.full_like(s, v), s=s, dv=np.full_like(s, dv),
                                      v_leader=np.full_like(s, v - dv)), IDM)
                assert np.all(np.diff(a) >= -1e-12)

    def test_non_positive_spacing(self):
        with pytest.raises(NonPositiveSpacing):
            idm_accel(state(5.0, 0.0), IDM)


class TestGipps:
    def test_hand_value(self):
        a = gipps_accel(state(5.0, 20.0, v_leader=6.0), GIPPS)
        assert 5 + 2.5 * math.sqrt(0.525) == pytest.approx(6.8114, abs=1e-4)
        assert -3 + math.sqrt(138) == pytest.approx(8.7473, abs=1e-4)
        assert a == pytest.approx(1.8114, abs=1e-4)

    def test_saturates_at_desired_speed(self):
        assert gipps_accel(state(10.0, 1e4, v_leader=10.0), GIPPS) == pytest.approx(0.0, abs=1e-12)

    def test_negative_radicand_clamped(self):
        a = gipps_accel(state(30.0, 1e-3, v_leader=0.0), GIPPS)
        assert math.isfinite(a)
        # clamped braking expression -b(tau/2 + theta), then (expr - v)/tau
        assert a == pytest.approx(-3.0 * (0.5 + 0.5) - 30.0)


class TestFvdm:
    @pytest.mark.parametrize("p", [CTH, SIG])
    def test_boundaries(self, p):
        assert fvdm_desired_speed(2.0, p) == pytest.approx(0.0, abs=1e-12)
        assert fvdm_desired_speed(2.0 + 1.0 * 10.0, p) == pytest.approx(10.0, abs=1e-12)

    def test_cth_value(self):
        assert fvdm_desired_speed(7.0, CTH) == pytest.approx(5.0)

    def test_accel_values(self):
        assert fvdm_accel(state(5.0, 7.0), CTH) == pytest.approx(0.0, abs=1e-12)
        # leader 2 m/s faster: dv = v_follower - v_leader = -2
        assert fvdm_accel(state(5.0, 7.0, dv=-2.0), CTH) == pytest.approx(0.6, abs=1e-12)

    @pytest.mark.parametrize("p", [CTH, SIG])
    def test_monotone_bounded_continuous(self, p):
        s = np.linspace(-5, 30, 3501)
        V = fvdm_desired_speed(s, p)
        assert np.all(np.diff(V) >= -1e-12)
        assert V.min() >= 0 and V.max() <= p.V_max
        for bp in (p.s0, p.s0 + p.T * p.V_max):
            assert abs(fvdm_desired_speed(bp + 1e-12, p) - fvdm_desired_speed(bp - 1e-12, p)) < 1e-9


class TestRegistry:
    @pytest.mark.parametrize("kind,count", [("IDM", 6), ("Gipps", 7), ("FVDM-CTH", 5), ("FVDM-SIGMOID", 5)])
    def test_bound_counts(self, kind, count):
        box = classical.param_bounds(kind)
        assert len(box) == count
        assert all(0 < lo < hi < math.inf for lo, hi in box.values())

    def test_unknown_model(self):
        with pytest.raises(UnknownModelKind):
            classical.param_bounds("OVM")

    def test_bound_override(self):
        box = classical.param_bounds("IDM", {"a_max": (0.5, 2.0)})
        assert box["a_max"] == (0.5, 2.0)

    @pytest.mark.parametrize("kind", classical.CLASSICAL_MODELS)
    def test_finite_over_bounds_box(self, kind, rng):
        model = classical.get_model(kind)
        box = classical.param_bounds(kind)
        lo = np.array([box[n][0] for n in model.param_names])
        hi = np.array([box[n][1] for n in model.param_names])
        P = lo + rng.random((500, len(lo))) * (hi - lo)
        params = model.params_from_array(P)
        st_ = CfState(v=rng.uniform(0, 45, 500), s=rng.uniform(0.01, 200, 500), dv=rng.uniform(-20, 20, 500),
                      v_leader=rng.uniform(0, 45, 500))
        assert np.all(np.isfinite(model.accel(st_, params)))


@settings(max_examples=60, deadline=None)
@given(v=st.floats(0, 40), s=st.floats(0.05, 300), dv=st.floats(-15, 15))
def test_all_models_total(v, s, dv):
    for kind, p in classical.EXAMPLE_PARAMS.items():
        a = classical.get_model(kind).accel(state(v, s, dv), p)
        assert np.all(np.isfinite(a))
