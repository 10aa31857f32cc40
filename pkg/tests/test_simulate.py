import numpy as np
import pytest

from flapsim.aero import AeroConfig
from flapsim.multibody import MorphologyConfig
from flapsim.simulate import (SimConfig, integrate, periodicity_residual,
                              rk4_step)
from tests.test_kinematics import make_body_params, make_params


def still_params():
    """Waveforms with (effectively) zero amplitude everywhere."""
    p = make_params(phi_m=1e-300, psi_m=0.0, theta_m=0.0)
    bp = make_body_params(theta_B_m=0.0, theta_A_m=0.0)
    return p, bp


class TestRK4Step:
    def test_exact_on_cubic(self):
        # RK4 is exact for polynomial right-hand sides up to degree 3
        f = lambda t, y: np.array([3 * t ** 2 - 2 * t + 1.0])
        y = rk4_step(f, 0.5, np.array([2.0]), 0.25)
        exact = 2.0 + (0.75 ** 3 - 0.75 ** 2 + 0.75) - (0.5 ** 3 - 0.5 ** 2 + 0.5)
        assert np.isclose(y[0], exact, rtol=1e-14)

    def test_fourth_order_on_harmonic_oscillator(self):
        k_over_m = 40.0 ** 2

        def f(t, y):
            return np.array([y[1], -k_over_m * y[0]])

        def propagate(n):
            y = np.array([1.0, 0.0])
            dt = 1.0 / n
            for i in range(n):
                y = rk4_step(f, i * dt, y, dt)
            return y

        exact = np.array([np.cos(40.0), -40.0 * np.sin(40.0)])
        e1 = np.linalg.norm(propagate(400) - exact)
        e2 = np.linalg.norm(propagate(800) - exact)
        assert 12.0 < e1 / e2 < 20.0


class TestIntegrate:
    def test_ballistic_exact(self):
        # no aero and motionless appendages: uniform gravity only, which
        # RK4 integrates exactly
        p, bp = still_params()
        morph = MorphologyConfig()
        sim = SimConfig(steps_per_period=100, periods=2)
        x0 = np.array([0.1, -0.2, 0.05])
        v0 = np.array([0.3, 0.1, -0.2])
        traj = integrate(x0, v0, p, p, bp, morph, sim, aero=None)
        tf = traj.t[-1]
        expected = x0 + v0 * tf + 0.5 * morph.g * tf ** 2 * np.array([0, 0, 1.0])
        assert np.allclose(traj.x[-1], expected, atol=1e-13)
        assert np.allclose(traj.xdot[-1],
                           v0 + morph.g * tf * np.array([0, 0, 1.0]),
                           atol=1e-13)

    def test_determinism(self):
        p = make_params()
        bp = make_body_params()
        morph = MorphologyConfig()
        sim = SimConfig(steps_per_period=100)
        aero = AeroConfig(quadrature_points=16)
        a = integrate(np.zeros(3), [0.1, 0, 0], p, p, bp, morph, sim, aero)
        b = integrate(np.zeros(3), [0.1, 0, 0], p, p, bp, morph, sim, aero)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.xdot, b.xdot)
        assert np.array_equal(a.F_R, b.F_R)

    def test_record_stride_does_not_alter_dynamics(self):
        p = make_params()
        bp = make_body_params()
        morph = MorphologyConfig()
        aero = AeroConfig(quadrature_points=16)
        dense = integrate(np.zeros(3), [0.1, 0, 0], p, p, bp, morph,
                          SimConfig(steps_per_period=100), aero)
        sparse = integrate(np.zeros(3), [0.1, 0, 0], p, p, bp, morph,
                           SimConfig(steps_per_period=100, record_stride=7),
                           aero)
        assert np.array_equal(dense.x_final, sparse.x_final)
        assert np.array_equal(dense.xdot_final, sparse.xdot_final)
        assert sparse.t[-1] == dense.t[-1]

    def test_translation_invariance(self):
        p = make_params()
        bp = make_body_params()
        morph = MorphologyConfig()
        aero = AeroConfig(quadrature_points=16)
        sim = SimConfig(steps_per_period=100)
        shift = np.array([1.7, -2.1, 0.4])
        a = integrate(np.zeros(3), [0.1, 0, 0], p, p, bp, morph, sim, aero)
        b = integrate(shift, [0.1, 0, 0], p, p, bp, morph, sim, aero)
        assert np.allclose(b.x - shift, a.x, atol=1e-12)
        assert np.allclose(b.xdot, a.xdot, atol=1e-12)

    def test_cached_motion_matches_direct_evaluation(self):
        # the motion table must agree with a fresh half-step evaluation
        from flapsim.kinematics import prescribed_motion_at
        from flapsim.simulate import MotionTable
        p = make_params()
        bp = make_body_params()
        table = MotionTable(p, p, bp, 100)
        for t in (0.0, 3 * p.period / 200, 17 * p.period / 200 + p.period):
            cached = table.at(t)
            direct = prescribed_motion_at(t % p.period, p, p, bp)
            assert np.allclose(cached.Q_R, direct.Q_R, atol=1e-12)
            assert np.allclose(cached.Omega_R, direct.Omega_R, atol=1e-9)

    def test_uniform_time_grid(self):
        p = make_params()
        bp = make_body_params()
        traj = integrate(np.zeros(3), np.zeros(3), p, p, bp,
                         MorphologyConfig(), SimConfig(steps_per_period=100),
                         AeroConfig(quadrature_points=16))
        dt = np.diff(traj.t)
        assert np.all(dt > 0)
        assert np.allclose(dt, dt[0], rtol=1e-9)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_detection(self):
        # force a blow-up by integrating with an enormous initial speed
        # and a long horizon; the run must stop with a flag, not raise
        p = make_params()
        bp = make_body_params()
        morph = MorphologyConfig(m_B=1e-8, m_A=1e-9, m_R=1e-9, m_L=1e-9)
        aero = AeroConfig(quadrature_points=8)
        traj = integrate(np.zeros(3), [1e150, 0, 0], p, p, bp, morph,
                         SimConfig(steps_per_period=100, periods=5), aero)
        assert traj.diverged
        assert traj.t_last_valid < 5 * p.period
        assert np.all(np.isfinite(traj.x))

    def test_csv_round_trip(self, tmp_path):
        p = make_params()
        bp = make_body_params()
        traj = integrate(np.zeros(3), [0.1, 0, 0], p, p, bp,
                         MorphologyConfig(),
                         SimConfig(steps_per_period=100, record_stride=10),
                         AeroConfig(quadrature_points=16))
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert data.shape[0] == len(traj.t)
        assert np.allclose(data[:, 0], traj.t)
        assert np.allclose(data[:, 1:4], traj.x)
        header = path.read_text().splitlines()[0]
        assert header.startswith("t,x1,x2,x3")


class TestPeriodicityResidual:
    def test_ballistic_residual_scale(self):
        p, bp = still_params()
        morph = MorphologyConfig()
        dx, dv = periodicity_residual(p, p, bp, np.zeros(3), morph,
                                      SimConfig(steps_per_period=100))
        T = p.period
        assert np.isclose(dx, 0.5 * morph.g * T ** 2, rtol=1e-10)
        assert np.isclose(dv, morph.g * T, rtol=1e-10)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(steps_per_period=50)
        with pytest.raises(ValueError):
            SimConfig(periods=0)
        with pytest.raises(ValueError):
            SimConfig(integrator="euler")
