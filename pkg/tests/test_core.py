import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from homodyne_decay import (
    EXCITED,
    GROUND,
    BlochState,
    DensityMatrix2,
    HomodyneRecord,
    InvalidParameterError,
    SimConfig,
    substream,
    wiener_increments,
)
from homodyne_decay.core import check_seed

DT = 2e-8


class TestBlochState:
    def test_labels(self):
        assert BlochState.from_label("+z") == GROUND
        assert BlochState.from_label("-z") == EXCITED
        assert BlochState.from_label("ground") == GROUND
        assert BlochState.from_label("x") == BlochState(1.0, 0.0, 0.0)
        assert BlochState.from_label("-y") == BlochState(0.0, -1.0, 0.0)

    def test_unknown_label(self):
        with pytest.raises(InvalidParameterError):
            BlochState.from_label("+w")

    def test_parse_triple(self):
        assert BlochState.parse("0.5,0,0.2") == BlochState(0.5, 0.0, 0.2)
        with pytest.raises(InvalidParameterError):
            BlochState.parse("1,1,1")
        with pytest.raises(InvalidParameterError):
            BlochState.parse("1,0")

    def test_outside_ball(self):
        with pytest.raises(InvalidParameterError):
            BlochState(1.0, 0.0, 0.1).validate()
        BlochState(1.0 + 1e-10, 0.0, 0.0).validate()

    def test_nonfinite(self):
        with pytest.raises(InvalidParameterError):
            BlochState(float("nan"))

    @given(
        st.floats(-0.57, 0.57),
        st.floats(-0.57, 0.57),
        st.floats(-0.57, 0.57),
    )
    def test_density_round_trip(self, x, y, z):
        s = BlochState(x, y, z)
        rho = s.to_density().validate()
        back = rho.to_bloch()
        assert back.as_array() == pytest.approx(s.as_array(), abs=1e-15)

    def test_density_conventions(self):
        assert EXCITED.to_density().rho11 == 1.0
        assert GROUND.to_density().rho11 == 0.0
        assert BlochState(0.0, 1.0, 0.0).to_density().rho01 == -0.5j

    def test_density_positivity(self):
        with pytest.raises(InvalidParameterError):
            DensityMatrix2(0.5, 0.6).validate()
        with pytest.raises(InvalidParameterError):
            DensityMatrix2(1.5).validate()


class TestSimConfig:
    def test_defaults(self):
        cfg = SimConfig()
        assert cfg.gamma_dt == pytest.approx(0.046)
        assert cfg.duration == pytest.approx(2e-6)
        assert cfg.times.shape == (101,)
        assert cfg.initial_state == EXCITED

    @pytest.mark.parametrize(
        "kw",
        [
            {"eta": 1.2},
            {"eta": -0.1},
            {"dt": 0.0},
            {"gamma": -1.0},
            {"dt": 1e-6},
            {"n_steps": -1},
            {"n_steps": 2.5},
            {"seed": -1},
            {"seed": 2**64},
            {"initial_state": "0.9,0,0.9"},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(InvalidParameterError):
            SimConfig(**kw)

    def test_string_state(self):
        assert SimConfig(initial_state="+x").initial_state == BlochState(1.0, 0.0, 0.0)

    def test_steps_for(self):
        cfg = SimConfig()
        assert cfg.steps_for(40e-9) == 2
        assert cfg.steps_for(1e-6) == 50
        with pytest.raises(InvalidParameterError):
            cfg.steps_for(30e-9)

    def test_seed_types(self):
        assert check_seed(np.uint64(5)) == 5
        with pytest.raises(InvalidParameterError):
            check_seed(True)
        with pytest.raises(InvalidParameterError):
            check_seed(1.5)


@pytest.fixture(scope="module")
def draws():
    return wiener_increments(12345, 10**6, DT)


class TestWiener:
    def test_moments(self, draws):
        n = draws.size
        assert abs(draws.mean()) < 4 * math.sqrt(DT / n)
        assert draws.var() == pytest.approx(DT, rel=0.01)

    def test_tail_fraction(self, draws):
        frac = np.mean(draws < -math.sqrt(DT))
        assert norm.cdf(-1.0) == pytest.approx(0.1587, abs=5e-5)
        assert frac == pytest.approx(norm.cdf(-1.0), abs=0.002)

    def test_deterministic(self):
        a = wiener_increments(7, 1000, DT)
        b = wiener_increments(7, 1000, DT)
        assert np.array_equal(a, b)

    def test_seed_changes_output(self):
        assert not np.array_equal(wiener_increments(7, 100, DT), wiener_increments(8, 100, DT))

    def test_zero_count(self):
        assert wiener_increments(0, 0, DT).size == 0

    @pytest.mark.parametrize("dt", [0.0, -1e-9])
    def test_bad_dt(self, dt):
        with pytest.raises(InvalidParameterError):
            wiener_increments(0, 10, dt)

    def test_substreams_independent(self):
        a = wiener_increments(3, 10**5, 1.0, index=0)
        b = wiener_increments(3, 10**5, 1.0, index=1)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(a.size)

    def test_streams_differ(self):
        a = substream(3, 0, stream=0).random(8)
        b = substream(3, 0, stream=1).random(8)
        assert not np.array_equal(a, b)

    def test_prefix_stable(self):
        # a shorter request is a prefix of a longer one
        assert np.array_equal(wiener_increments(9, 50, DT), wiener_increments(9, 500, DT)[:50])


class TestRecord:
    def test_read_only(self):
        rec = HomodyneRecord(2.3e6, 0.3, DT, [0.1, -0.2])
        with pytest.raises(ValueError):
            rec.samples[0] = 1.0
        assert len(rec) == 2
        assert rec.integrated == pytest.approx(-0.1)

    def test_equality(self):
        a = HomodyneRecord(2.3e6, 0.3, DT, [0.1, -0.2])
        assert a == HomodyneRecord(2.3e6, 0.3, DT, np.array([0.1, -0.2]))
        assert a != HomodyneRecord(2.3e6, 0.3, DT, [0.1, -0.3])

    def test_rejects_2d(self):
        with pytest.raises(InvalidParameterError):
            HomodyneRecord(2.3e6, 0.3, DT, np.zeros((2, 2)))

    def test_variance_ratio(self):
        gamma = 2.3e6
        dv = wiener_increments(1, 10**5, DT) * math.sqrt(gamma)
        assert HomodyneRecord(gamma, 0.3, DT, dv).variance_ratio() == pytest.approx(1.0, abs=0.02)
