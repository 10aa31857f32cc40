import numpy as np
import pytest

from flapsim.aero import AeroConfig
from flapsim.floquet import (MonodromyResult, PeriodicLinearSystem,
                             make_openloop_system, mode_report, monodromy,
                             numeric_A)
from flapsim.multibody import MorphologyConfig
from tests.test_kinematics import make_body_params, make_params


class TestMonodromy:
    def test_zero_system_identity(self):
        sys = PeriodicLinearSystem(n=6, A=lambda t: np.zeros((6, 6)),
                                   period=0.1)
        res = monodromy(sys, steps_per_period=100)
        assert np.allclose(res.M, np.eye(6), atol=1e-14)
        assert np.allclose(res.multipliers, 1.0, atol=1e-14)

    def test_constant_diagonal_matches_exponential(self):
        T = 0.25
        d = np.array([-1.0, -2.0, -3.0, -4.0, -5.0, -6.0]) / T
        A0 = np.diag(d)
        sys = PeriodicLinearSystem(n=6, A=lambda t: A0, period=T)
        res = monodromy(sys, steps_per_period=2000)
        expected = np.exp(np.array([-1.0, -2.0, -3.0, -4.0, -5.0, -6.0]))
        got = np.sort(res.multipliers.real)[::-1]
        assert np.allclose(got, np.sort(expected)[::-1], rtol=1e-8)
        mu = np.sort(res.exponents.real)
        assert np.allclose(mu, np.sort(d), rtol=1e-8)

    def test_mathieu_zero_forcing(self):
        # x'' + x = 0 viewed as a pi-periodic system: multipliers on the
        # unit circle at angles +-pi
        T = np.pi

        def A(t):
            return np.array([[0.0, 1.0], [-1.0, 0.0]])

        # embed the 2-state oscillator in a 6-state block system
        def A6(t):
            out = np.zeros((6, 6))
            out[:2, :2] = A(t)
            out[2:4, 2:4] = A(t)
            out[4:6, 4:6] = A(t)
            return out

        sys = PeriodicLinearSystem(n=6, A=A6, period=T)
        res = monodromy(sys, steps_per_period=2000)
        assert np.allclose(np.abs(res.multipliers), 1.0, atol=1e-8)
        assert np.allclose(res.multipliers.real, -1.0, atol=1e-8)

    def test_liouville_determinant(self):
        # det M = exp of the integrated trace for a periodic coefficient
        T = 1.0
        rng = np.random.default_rng(21)
        B = rng.normal(size=(6, 6))

        def A(t):
            return B * np.cos(2 * np.pi * t / T) + 0.3 * np.eye(6)

        sys = PeriodicLinearSystem(n=6, A=A, period=T)
        res = monodromy(sys, steps_per_period=4000)
        # integral of tr A over the period: cosine integrates to zero
        expected = np.exp(0.3 * 6 * T)
        assert np.isclose(np.linalg.det(res.M), expected, rtol=1e-6)

    def test_start_time_invariance(self):
        T = 1.0

        def A(t):
            c = np.cos(2 * np.pi * t / T)
            return np.array([[0.0, 1.0], [-4.0 - c, -0.1]])

        def A6(t):
            out = np.zeros((6, 6))
            for k in range(3):
                out[2 * k:2 * k + 2, 2 * k:2 * k + 2] = A(t)
            return out

        sys = PeriodicLinearSystem(n=6, A=A6, period=T)
        r0 = monodromy(sys, steps_per_period=2000)
        r1 = monodromy(sys, steps_per_period=2000, t0=0.37 * T)
        a = np.sort_complex(r0.multipliers)
        b = np.sort_complex(r1.multipliers)
        assert np.allclose(a, b, atol=1e-8)

    def test_conjugate_pairs(self):
        T = 1.0

        def A6(t):
            out = np.zeros((6, 6))
            c = np.cos(2 * np.pi * t)
            for k in range(3):
                out[2 * k, 2 * k + 1] = 1.0
                out[2 * k + 1, 2 * k] = -(3.0 + k + 0.5 * c)
            return out

        sys = PeriodicLinearSystem(n=6, A=A6, period=T)
        res = monodromy(sys, steps_per_period=1500)
        rho = res.multipliers
        complex_ones = rho[np.abs(rho.imag) > 1e-10]
        assert np.allclose(np.sort_complex(complex_ones),
                           np.sort_complex(np.conj(complex_ones)), atol=1e-10)

    def test_step_halving_stability(self):
        T = 0.0857

        def A6(t):
            out = np.zeros((6, 6))
            out[0:3, 3:6] = np.eye(3)
            out[3:6, 3:6] = -2.0 * np.eye(3) * (1 + 0.3 * np.sin(2 * np.pi * t / T))
            return out

        sys = PeriodicLinearSystem(n=6, A=A6, period=T)
        r1 = monodromy(sys, steps_per_period=1000)
        r2 = monodromy(sys, steps_per_period=2000)
        a = np.sort(np.abs(r1.multipliers))
        b = np.sort(np.abs(r2.multipliers))
        assert np.abs(a - b).max() < 1e-8


@pytest.fixture(scope="module")
def sys6():
    p = make_params()
    bp = make_body_params()
    return make_openloop_system(
        p, p, bp, np.array([-0.2, 0.0, 0.05]), MorphologyConfig(),
        AeroConfig(quadrature_points=16), steps_per_period=200)


class TestOpenLoopSystem:
    def test_block_structure(self, sys6):
        A = sys6.A(0.013)
        assert np.allclose(A[:, 0:3], 0.0)
        assert np.allclose(A[0:3, 3:6], np.eye(3))
        assert np.allclose(A[0:3, 0:3], 0.0)

    def test_periodicity(self, sys6):
        T = sys6.period
        for t in (0.0, 0.3 * T, 0.55 * T):
            a = sys6.A(t)
            b = sys6.A(t + T)
            assert np.abs(a - b).max() < 1e-9 * max(np.abs(a).max(), 1.0)

    def test_matches_finite_difference_of_nonlinear_rhs(self, sys6):
        # A(t) columns 4-6 against central differences of the full
        # acceleration with respect to body velocity
        from flapsim.simulate import MotionTable, _accel
        p = make_params()
        bp = make_body_params()
        morph = MorphologyConfig()
        aero = AeroConfig(quadrature_points=16)
        table = MotionTable(p, p, bp, 200)
        h = 1e-6
        for j_t, t in ((40, 40 * p.period / 200), (113, 113 * p.period / 200)):
            A = sys6.A(t)
            motion = table.at(t)
            # nominal velocity used inside the system at this grid time
            from flapsim.simulate import SimConfig, integrate
            fine = integrate(np.zeros(3), [-0.2, 0.0, 0.05], p, p, bp, morph,
                             SimConfig(steps_per_period=400), aero=aero)
            xdot = fine.xdot[2 * j_t]
            for i, e in enumerate(np.eye(3)):
                ap = _accel(motion, np.zeros(3), xdot + h * e, morph, aero)[0]
                am = _accel(motion, np.zeros(3), xdot - h * e, morph, aero)[0]
                fd = (ap - am) / (2 * h)
                assert np.allclose(A[3:6, 3 + i], fd, rtol=1e-4,
                                   atol=1e-4 * np.linalg.norm(fd))

    def test_three_unit_multipliers(self, sys6):
        # position errors never feed back, so the monodromy matrix has a
        # structural triple of unit multipliers
        res = monodromy(sys6, steps_per_period=200)
        rho = np.sort(np.abs(res.multipliers - 1.0))
        assert np.all(rho[:3] < 1e-6)


class TestNumericJacobian:
    def test_matches_analytic_on_smooth_rhs(self):
        M = np.random.default_rng(22).normal(size=(9, 9))

        def rhs(t, y):
            return M @ y + 0.1 * np.sin(y)

        y0 = np.linspace(-1, 1, 9)
        J = numeric_A(rhs, 0.0, y0)
        exact = M + 0.1 * np.diag(np.cos(y0))
        assert np.allclose(J, exact, atol=1e-7)

    def test_step_floor_handles_zero_state(self):
        def rhs(t, y):
            return y ** 2

        J = numeric_A(rhs, 0.0, np.zeros(9))
        assert np.allclose(J, 0.0, atol=1e-8)


class TestModeReport:
    def test_sorted_and_labeled(self):
        T = 0.1

        def A6(t):
            out = np.zeros((6, 6))
            out[0:3, 3:6] = np.eye(3)
            out[3:6, 3:6] = np.diag([-1.0, -30.0, -2.0])
            return out

        sys = PeriodicLinearSystem(n=6, A=A6, period=T)
        res = monodromy(sys, steps_per_period=1000)
        report = mode_report(res)
        mags = [m["magnitude"] for m in report]
        assert mags == sorted(mags, reverse=True)
        assert all(m["eigen_residual"] < 1e-8 for m in report)
        # three structural unit multipliers are position-dominated
        unit = [m for m in report if abs(m["magnitude"] - 1.0) < 1e-9]
        assert len(unit) == 3
        assert all(m["dominant_block"] == "position" for m in unit)

    def test_periodic_modes_periodicity(self):
        T = 0.2
        A0 = np.zeros((6, 6))
        A0[0:3, 3:6] = np.eye(3)
        A0[3:6, 3:6] = -np.eye(3) / T
        sys = PeriodicLinearSystem(n=6, A=lambda t: A0, period=T)
        res = monodromy(sys, steps_per_period=2000)
        modes = res.periodic_modes()
        assert np.allclose(modes[-1], modes[0], atol=1e-6)

    def test_lateral_longitudinal_split(self):
        T = 0.1

        def A6(t):
            out = np.zeros((6, 6))
            out[0:3, 3:6] = np.eye(3)
            # decoupled: lateral axis damped differently
            out[3:6, 3:6] = np.diag([-3.0, -11.0, -5.0])
            return out

        res = monodromy(PeriodicLinearSystem(n=6, A=A6, period=T), 500)
        report = mode_report(res)
        for m in report:
            assert m["plane"] in ("longitudinal", "lateral")
        lat = [m for m in report if m["plane"] == "lateral"]
        assert len(lat) == 2  # one position, one velocity lateral mode


def test_system_validation():
    with pytest.raises(ValueError):
        PeriodicLinearSystem(n=5, A=lambda t: np.zeros((5, 5)), period=1.0)
    with pytest.raises(ValueError):
        PeriodicLinearSystem(n=6, A=lambda t: np.zeros((6, 6)), period=-1.0)
