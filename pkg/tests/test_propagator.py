import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from homodyne_decay import (
    EXCITED,
    GROUND,
    BlochState,
    DensityMatrix2,
    HomodyneRecord,
    IntegrationDivergedError,
    InvalidParameterError,
    SimConfig,
    UnsupportedStateError,
    simulate_ensemble,
    simulate_trajectory,
    step_bloch,
    step_density,
    substream,
    track_ensemble,
    track_trajectory,
    unconditional_state,
)
from homodyne_decay.propagator import (
    bloch_increment,
    divergence_bound,
    innovation,
    iter_ensemble,
    unconditional_curve,
    unconditional_discrete,
)

GAMMA, DT = 2.3e6, 20e-9
GDT = GAMMA * DT

dvs = st.floats(-5.0, 5.0, allow_nan=False)
etas = st.floats(0.0, 1.0)


@st.composite
def xz_states(draw, y=False):
    """Points inside the unit ball (optionally in the y = 0 plane)."""
    theta = draw(st.floats(0, math.pi))
    phi = draw(st.floats(0, 2 * math.pi)) if y else 0.0
    r = draw(st.floats(0, 1))
    return BlochState(r * math.sin(theta) * math.cos(phi), r * math.sin(theta) * math.sin(phi), r * math.cos(theta))


def sim(**kw):
    base = dict(gamma=GAMMA, eta=0.3, dt=DT, n_steps=100, seed=0)
    base.update(kw)
    return SimConfig(**base)


class TestStepBloch:
    @given(dvs, etas)
    def test_ground_fixed_point(self, dV, eta):
        assert step_bloch(GROUND, dV, sim(eta=eta)) == GROUND

    def test_excited_no_signal(self):
        s = step_bloch(EXCITED, 0.0, sim())
        assert s.x == 0.0 and s.y == 0.0
        assert s.z - EXCITED.z == pytest.approx(2 * GDT, rel=1e-12)
        assert 2 * GDT == pytest.approx(0.092)

    def test_stochastic_excitation(self):
        cfg = sim()
        dW = -2 * math.sqrt(DT)
        dV = math.sqrt(0.3) * GAMMA * DT + math.sqrt(GAMMA) * dW
        assert dW < -math.sqrt(GAMMA / 0.3) * DT
        assert step_bloch(BlochState(1.0, 0.0, 0.0), dV, cfg).z < 0.0

    @given(xz_states(y=True), dvs, etas)
    def test_plane_confinement(self, s, dV, eta):
        s = BlochState(s.x, 0.0, s.z)
        assert step_bloch(s, dV, sim(eta=eta)).y == 0.0

    @given(xz_states(y=True), dvs, etas)
    def test_sign_symmetry(self, s, dV, eta):
        cfg = sim(eta=eta)
        a = step_bloch(s, dV, cfg)
        b = step_bloch(BlochState(-s.x, -s.y, s.z), -dV, cfg)
        assert (b.x, b.y, b.z) == (-a.x, -a.y, a.z)

    @given(xz_states(y=True), dvs)
    def test_no_efficiency_is_deterministic(self, s, dV):
        cfg = sim(eta=0.0)
        a = step_bloch(s, dV, cfg)
        assert a == step_bloch(s, 0.0, cfg)
        assert a.x == pytest.approx(s.x * (1 - GDT / 2), abs=1e-15)
        assert a.z == pytest.approx(1 - (1 - s.z) * (1 - GDT), abs=1e-15)

    @settings(max_examples=300)
    @given(st.floats(1e-3, 1.0), st.floats(-0.999, 0.999), st.floats(-4.0, 4.0), st.floats(0.05, 1.0))
    def test_excitation_threshold(self, x, z, w, eta):
        # dz < 0 exactly when dW < -sqrt(gamma) dt / (sqrt(eta) x), for x > 0 and z < 1
        assume(x * x + z * z <= 1.0)
        dW = w * math.sqrt(DT)
        thr = -math.sqrt(GAMMA) * DT / (math.sqrt(eta) * x)
        assume(abs(dW - thr) > 1e-9 * abs(thr))
        dV = math.sqrt(eta) * GAMMA * x * DT + math.sqrt(GAMMA) * dW
        dz = bloch_increment(x, 0.0, z, dV, GAMMA, eta, DT)[2]
        assert (dz < 0) == (dW < thr)

    def test_arrays(self):
        x = np.array([0.0, 0.5, -0.5])
        dx, dy, dz = bloch_increment(x, 0.0, np.zeros(3), np.array([0.1, 0.1, -0.1]), GAMMA, 0.3, DT)
        assert dx.shape == (3,)
        assert dx[1] == pytest.approx(-dx[2])

    def test_innovation(self):
        assert innovation(1.0, 0.0, GAMMA, 0.25, DT) == pytest.approx(-0.5 * GDT)


class TestStepDensity:
    def test_ground(self):
        for dV in (-1.0, 0.0, 0.3):
            assert step_density(DensityMatrix2(0.0, 0.0), dV, sim()) == DensityMatrix2(0.0, 0.0)

    def test_excited_no_signal(self):
        r = step_density(DensityMatrix2(1.0, 0.0), 0.0, sim())
        assert r.rho11 == pytest.approx(1 - GDT, rel=1e-14)
        assert r.rho01 == 0.0

    def test_rejects_complex(self):
        with pytest.raises(UnsupportedStateError):
            step_density(DensityMatrix2(0.5, 0.1 + 0.1j), 0.0, sim())

    def test_grid_equivalence(self):
        rng = np.random.default_rng(2024)
        cfg = sim()
        worst = 0.0
        for _ in range(2000):
            r, th = math.sqrt(rng.random()), rng.uniform(0, 2 * math.pi)
            s = BlochState(r * math.cos(th), 0.0, r * math.sin(th))
            dV = rng.normal(0, math.sqrt(GDT)) * rng.choice([1, 3, 10])
            a = step_bloch(s, dV, cfg)
            b = step_density(s.to_density(), dV, cfg).to_bloch()
            worst = max(worst, abs(a.x - b.x), abs(a.z - b.z), abs(b.y))
        assert worst < 1e-12

    @given(xz_states(), dvs, etas)
    def test_equivalence_property(self, s, dV, eta):
        cfg = sim(eta=eta)
        a = step_bloch(s, dV, cfg)
        b = step_density(s.to_density(), dV, cfg).to_bloch()
        assert b.x == pytest.approx(a.x, abs=1e-12)
        assert b.z == pytest.approx(a.z, abs=1e-12)


class TestUnconditional:
    def test_identity_at_zero(self):
        s = BlochState(0.3, -0.2, 0.1)
        u = unconditional_state(s, 0.0, GAMMA)
        assert u.as_array() == pytest.approx(s.as_array(), abs=1e-15)

    def test_long_time(self):
        assert unconditional_state(EXCITED, 1e-3, GAMMA) == GROUND

    def test_t1(self):
        s = unconditional_state(EXCITED, 430e-9, GAMMA)
        assert s.z == pytest.approx(1 - 2 * math.exp(-0.989), abs=1e-12)
        assert round(s.z, 4) == 0.2561

    def test_one_microsecond(self):
        assert unconditional_state(EXCITED, 1e-6, GAMMA).z == pytest.approx(0.7995, abs=5e-5)
        assert unconditional_state(BlochState(1.0, 0, 0), 1e-6, GAMMA).x == pytest.approx(0.3166, abs=5e-5)

    def test_negative_time(self):
        with pytest.raises(InvalidParameterError):
            unconditional_state(EXCITED, -1.0, GAMMA)

    def test_curve_matches_scalar(self):
        s = BlochState(0.6, 0.0, -0.8)
        t = np.linspace(0, 2e-6, 7)
        x, _, z = unconditional_curve(s, t, GAMMA)
        for ti, xi, zi in zip(t, x, z):
            u = unconditional_state(s, ti, GAMMA)
            assert (xi, zi) == pytest.approx((u.x, u.z), abs=1e-15)

    def test_discrete_converges(self):
        # the noise-free recursion approaches the closed form as dt -> 0
        s = BlochState(1.0, 0.0, 0.0)
        errs = []
        for k in range(4):
            n = 100 * 2**k
            x, _, _ = unconditional_discrete(s, n, GDT / 2**k)
            errs.append(abs(x - unconditional_state(s, 2e-6, GAMMA).x))
        assert all(a > 1.8 * b for a, b in zip(errs, errs[1:]))


class TestSimulate:
    def test_no_efficiency(self):
        cfg = sim(eta=0.0, seed=11)
        traj, rec = simulate_trajectory(cfg)
        n = np.arange(cfg.n_steps + 1)
        x, _, z = unconditional_discrete(cfg.initial_state, n, GDT)
        np.testing.assert_allclose(traj.z, z, rtol=0, atol=1e-14)
        np.testing.assert_array_equal(traj.x, 0.0)
        assert rec.variance_ratio() == pytest.approx(1.0, abs=0.4)

    def test_record_model(self):
        cfg = sim(initial_state="+x", seed=4)
        traj, rec = simulate_trajectory(cfg)
        dW = substream(4, 0).standard_normal(cfg.n_steps) * math.sqrt(DT)
        expected = math.sqrt(0.3) * GAMMA * traj.x[:-1] * DT + math.sqrt(GAMMA) * dW
        np.testing.assert_array_equal(rec.samples, expected)

    def test_replay(self):
        cfg = sim(initial_state="+x", seed=5)
        traj, rec = simulate_trajectory(cfg)
        assert track_trajectory(rec, cfg.initial_state) == traj

    def test_zero_record(self):
        rec = HomodyneRecord(GAMMA, 0.3, DT, np.zeros(100))
        traj = track_trajectory(rec, EXCITED)
        np.testing.assert_array_equal(traj.x, 0.0)
        assert np.all(np.diff(traj.z) > 0)
        _, _, z = unconditional_discrete(EXCITED, np.arange(101), GDT)
        np.testing.assert_allclose(traj.z, z, atol=1e-14)

    def test_single_positive_sample(self):
        traj = track_trajectory(HomodyneRecord(GAMMA, 0.3, DT, [0.2]), EXCITED)
        assert traj.x[1] == pytest.approx(math.sqrt(0.3) * 2 * 0.2, rel=1e-14)
        assert traj.x[1] > 0

    def test_empty_record(self):
        with pytest.raises(InvalidParameterError):
            track_trajectory(HomodyneRecord(GAMMA, 0.3, DT, []), EXCITED)

    def test_ensemble_rows_match_single(self):
        cfg = sim(initial_state="+x", seed=3, n_steps=40)
        ens = simulate_ensemble(cfg, 5, start=10)
        for row, idx in enumerate(ens.indices):
            traj, rec = simulate_trajectory(cfg, substream(3, int(idx)))
            assert ens.trajectory(row) == traj
            np.testing.assert_array_equal(ens.dV[row], rec.samples)

    def test_track_ensemble_matches(self):
        cfg = sim(initial_state="+x", seed=3, n_steps=40)
        ens = simulate_ensemble(cfg, 50)
        tr = track_ensemble(ens.dV, cfg)
        np.testing.assert_array_equal(tr.x, ens.x)
        np.testing.assert_array_equal(tr.z, ens.z)

    def test_workers_identical(self):
        cfg = sim(initial_state="+x", seed=8, n_steps=20)
        a = list(iter_ensemble(cfg, 450, chunk=100, workers=1))
        b = list(iter_ensemble(cfg, 450, chunk=100, workers=2))
        assert len(a) == len(b) == 5
        for p, q in zip(a, b):
            np.testing.assert_array_equal(p.indices, q.indices)
            np.testing.assert_array_equal(p.x, q.x)
            np.testing.assert_array_equal(p.dV, q.dV)

    def test_integrated_signal(self):
        ens = simulate_ensemble(sim(n_steps=10), 3)
        np.testing.assert_allclose(ens.integrated_signal(4), ens.dV[:, :4].sum(axis=1))
        np.testing.assert_array_equal(ens.integrated_signal(0), 0.0)

    def test_bad_policy(self):
        with pytest.raises(InvalidParameterError):
            simulate_ensemble(sim(n_steps=2), 2, on_divergence="ignore")


class TestEnsembleConsistency:
    @pytest.mark.parametrize("label", ["-z", "+x", "+y"])
    def test_mean_tracks_unconditional(self, label):
        cfg = sim(initial_state=label, seed=21)
        ens = simulate_ensemble(cfg, 10**4)
        n = np.arange(cfg.n_steps + 1)
        refs = unconditional_discrete(cfg.initial_state, n, GDT)
        for name, ref in zip("xyz", refs):
            a = getattr(ens, name)
            se = a.std(axis=0, ddof=1) / math.sqrt(len(ens))
            dev = np.abs(a.mean(axis=0) - ref)
            # at t = 0 the ensemble is exact and se = 0
            assert np.all(dev <= 3 * se + 1e-12), (name, float((dev / np.maximum(se, 1e-300)).max()))

    def test_closed_form_envelope(self):
        cfg = sim(seed=22)
        ens = simulate_ensemble(cfg, 10**4)
        _, _, z = unconditional_curve(EXCITED, cfg.times, GAMMA)
        assert np.abs(ens.z.mean(axis=0) - z).max() < 0.03


class TestDivergence:
    def test_bound_grows(self):
        b = divergence_bound(GDT, np.arange(1, 5))
        assert np.all(np.diff(b) > 0)
        assert b[0] == pytest.approx(5 * math.sqrt(GDT))

    def test_ideal_detector_masks_runaways(self):
        cfg = sim(eta=1.0, initial_state="+x")
        ens = simulate_ensemble(cfg, 500, on_divergence="mask")
        assert 0 < ens.diverged.sum() < 25
        assert np.isnan(ens.x[ens.diverged, -1]).all()
        assert np.isfinite(ens.x[ens.valid]).all()
        assert np.isinf(ens.max_excursion()[ens.diverged]).all()
        with pytest.raises(IntegrationDivergedError) as info:
            simulate_ensemble(cfg, 500)
        assert info.value.trajectory == int(np.flatnonzero(ens.diverged)[0])
        assert info.value.step >= 1

    def test_purity_shrinks_with_dt(self):
        med = []
        for k in range(3):
            cfg = sim(eta=1.0, initial_state="+x", dt=DT / 2**k, n_steps=100 * 2**k)
            med.append(np.median(simulate_ensemble(cfg, 400, on_divergence="mask").max_excursion()))
        assert med[0] > med[1] > med[2]
