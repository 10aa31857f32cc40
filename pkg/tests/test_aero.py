import numpy as np
import pytest

from flapsim.aero import (
    AeroConfig, WingAeroState, angle_of_attack, blade_element_forces,
    chord_from_table, chord_velocity, elliptic_chord, force_jacobian,
    lift_drag_coefficients, perturbed_forces,
)
from flapsim.kinematics import prescribed_motion_at
from flapsim.liegroup import MIRROR_Y, rot_x, rot_y
from tests.test_kinematics import make_body_params, make_params


def make_cfg(**overrides):
    return AeroConfig(**overrides)


def hover_like_state(t=0.013, side="right", xdot=(-0.25, 0.0, 0.02)):
    p = make_params()
    bp = make_body_params()
    m = prescribed_motion_at(t, p, p, bp)
    if side == "right":
        Q, Ow, mu = m.Q_R, m.Omega_R, np.array([0.0, 0.006, -0.001])
    else:
        Q, Ow, mu = m.Q_L, m.Omega_L, np.array([0.0, -0.006, -0.001])
    return WingAeroState(R=m.R, Q=Q, xdot=np.array(xdot, dtype=float),
                         Omega=m.Omega, Omega_w=Ow, mu=mu, side=side)


class TestChordVelocity:
    def test_zero_relative_motion(self):
        cfg = make_cfg(v_wind=np.array([0.3, -0.1, 0.2]))
        s = WingAeroState(R=np.eye(3), Q=rot_x(0.4),
                          xdot=np.array([0.3, -0.1, 0.2]),
                          Omega=np.zeros(3), Omega_w=np.zeros(3),
                          mu=np.array([0.0, 0.01, 0.0]))
        U = chord_velocity(np.linspace(0, cfg.span, 9), s, cfg)
        assert np.allclose(U, 0.0, atol=1e-15)

    def test_pure_flapping(self):
        cfg = make_cfg()
        w = 7.3
        s = WingAeroState(R=np.eye(3), Q=np.eye(3), xdot=np.zeros(3),
                          Omega=np.zeros(3), Omega_w=w * np.array([1.0, 0, 0]),
                          mu=np.zeros(3))
        r = np.array([0.01, 0.03])
        U = chord_velocity(r, s, cfg)
        # e1 x e2 = e3
        expected = np.outer(r * w, [0.0, 0.0, 1.0])
        assert np.allclose(U, expected, atol=1e-14)

    def test_projector_kills_spanwise_translation(self):
        rng = np.random.default_rng(5)
        cfg = make_cfg()
        for _ in range(5):
            s = WingAeroState(
                R=rot_y(rng.uniform(-1, 1)), Q=rot_x(rng.uniform(-1, 1)),
                xdot=rng.normal(size=3), Omega=rng.normal(size=3),
                Omega_w=np.zeros(3), mu=rng.normal(size=3) * 0.01)
            U = chord_velocity(np.array([0.0]), s, cfg)
            assert abs(U[0, 1]) < 1e-14


class TestAngleOfAttack:
    def test_cardinal_directions(self):
        assert np.isclose(angle_of_attack(np.array([1.0, 0, 0])), 0.0)
        assert np.isclose(angle_of_attack(np.array([0.0, 0, 1.0])),
                          np.pi / 2)
        U = np.array([1.0, 0.0, 1.0]) / np.sqrt(2)
        assert np.isclose(angle_of_attack(U), np.pi / 4)

    def test_branches_agree_for_chord_plane_flow(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            U = rng.normal(size=3)
            U[1] = 0.0
            n = np.linalg.norm(U)
            acos_b = np.arccos(abs(U[0]) / n)
            asin_b = np.arcsin(min(abs(U[2]) / n, 1.0))
            assert abs(acos_b - asin_b) < 1e-10
            assert np.isclose(angle_of_attack(U), acos_b, atol=1e-12)


class TestLiftDragCoefficients:
    def test_alpha_zero_values(self):
        # independent evaluation of the published fits at alpha = 0
        c_l, c_d = lift_drag_coefficients(0.0)
        assert np.isclose(c_l, 0.225 + 1.58 * np.sin(np.deg2rad(-7.2)),
                          rtol=1e-12)
        assert np.isclose(c_d, 1.92 - 1.55 * np.cos(np.deg2rad(-9.82)),
                          rtol=1e-12)
        assert np.isclose(c_l, 0.0270, atol=5e-4)
        assert np.isclose(c_d, 0.3924, atol=5e-4)

    def test_lift_peak_location(self):
        alpha = np.linspace(0, np.pi / 2, 20001)
        c_l, _ = lift_drag_coefficients(alpha)
        peak_deg = np.rad2deg(alpha[np.argmax(c_l)])
        assert abs(peak_deg - (90.0 + 7.2) / 2.13) < 0.05


class TestBladeElementForces:
    def test_zero_flow_zero_force(self):
        cfg = make_cfg()
        s = WingAeroState(R=np.eye(3), Q=np.eye(3), xdot=np.zeros(3),
                          Omega=np.zeros(3), Omega_w=np.zeros(3),
                          mu=np.zeros(3))
        res = blade_element_forces(s, cfg)
        assert np.allclose(res.L, 0.0)
        assert np.allclose(res.D, 0.0)
        assert np.allclose(res.M, 0.0)

    def test_lift_orthogonality(self):
        # dL is e2 x U at each node, so the resultant over a single-node
        # quadrature is orthogonal to both U and e2
        cfg = make_cfg(quadrature_points=8)
        s = hover_like_state()
        r, w, chord = cfg.nodes()
        U = chord_velocity(r, s, cfg)
        from flapsim.aero import forces_from_velocity
        for k in range(len(r)):
            L, _, _ = forces_from_velocity(U[k:k + 1], r[k:k + 1], w[k:k + 1],
                                           chord[k:k + 1], cfg.rho_air, 1.0)
            assert abs(L @ U[k]) < 1e-12 * np.linalg.norm(L) + 1e-15
            assert abs(L[1]) < 1e-15

    def test_quadratic_velocity_scaling(self):
        cfg = make_cfg()
        s = hover_like_state()
        res1 = blade_element_forces(s, cfg)
        s2 = WingAeroState(R=s.R, Q=s.Q, xdot=2 * s.xdot, Omega=2 * s.Omega,
                           Omega_w=2 * s.Omega_w, mu=s.mu, side=s.side)
        res2 = blade_element_forces(s2, cfg)
        assert np.allclose(res2.L, 4 * res1.L, rtol=1e-12)
        assert np.allclose(res2.D, 4 * res1.D, rtol=1e-12)

    def test_drag_power_nonpositive(self):
        cfg = make_cfg()
        for t in np.linspace(0, 1 / 11.6689, 13):
            s = hover_like_state(t=t)
            r, w, chord = cfg.nodes()
            U = chord_velocity(r, s, cfg)
            c_d = lift_drag_coefficients(angle_of_attack(U))[1]
            normU = np.linalg.norm(U, axis=-1)
            dD = -(0.5 * cfg.rho_air * chord * c_d * normU)[:, None] * U
            assert np.einsum("nj,nj,n->", dD, U, w) <= 1e-18

    def test_mirror_flow_flips_lift(self):
        # flipping e3.U at all nodes flips the vertical lift component
        # (the sign factor flips with it) and preserves the lift norm
        cfg = make_cfg(quadrature_points=16)
        s = hover_like_state()
        r, w, chord = cfg.nodes()
        U = chord_velocity(r, s, cfg)
        from flapsim.aero import forces_from_velocity
        L, _, _ = forces_from_velocity(U, r, w, chord, cfg.rho_air, 1.0)
        Um = U * np.array([1.0, 1.0, -1.0])
        Lm, _, _ = forces_from_velocity(Um, r, w, chord, cfg.rho_air, 1.0)
        assert np.isclose(np.linalg.norm(Lm), np.linalg.norm(L), rtol=1e-12)
        assert np.isclose(Lm[2], -L[2], rtol=1e-12)
        assert np.isclose(Lm[0], L[0], rtol=1e-12)

    def test_quadrature_convergence(self):
        s = hover_like_state()
        res64 = blade_element_forces(s, make_cfg(quadrature_points=64))
        res128 = blade_element_forces(s, make_cfg(quadrature_points=128))
        scale = np.linalg.norm(res64.F)
        assert np.linalg.norm(res128.F - res64.F) < 1e-6 * scale

    def test_left_wing_mirrors_right_in_body_frame(self):
        # symmetric wing kinematics and a longitudinal body state: the
        # left-wing force in the body frame is the y-mirror of the right
        cfg = make_cfg()
        for t in (0.004, 0.031, 0.055):
            sR = hover_like_state(t=t, side="right")
            sL = hover_like_state(t=t, side="left")
            FR = sR.Q @ blade_element_forces(sR, cfg).F
            FL = sL.Q @ blade_element_forces(sL, cfg).F
            assert np.allclose(FL, MIRROR_Y @ FR, rtol=1e-10, atol=1e-12)
            MR = sR.Q @ blade_element_forces(sR, cfg).M
            ML = sL.Q @ blade_element_forces(sL, cfg).M
            assert np.allclose(ML, -MIRROR_Y @ MR, rtol=1e-10, atol=1e-12)


class TestPerturbedForces:
    def test_zero_perturbation(self):
        cfg = make_cfg()
        s = hover_like_state()
        assert np.allclose(perturbed_forces(s, np.zeros(3), cfg), 0.0)

    def test_linearity(self):
        cfg = make_cfg()
        s = hover_like_state()
        rng = np.random.default_rng(7)
        d1, d2 = rng.normal(size=3), rng.normal(size=3)
        a, b = 0.7, -1.3
        lhs = perturbed_forces(s, a * d1 + b * d2, cfg)
        rhs = (a * perturbed_forces(s, d1, cfg)
               + b * perturbed_forces(s, d2, cfg))
        assert np.allclose(lhs, rhs, rtol=1e-10)

    def test_finite_difference_oracle(self):
        cfg = make_cfg()
        rng = np.random.default_rng(8)
        h = 1e-6
        for t in (0.01, 0.04, 0.07):
            for side in ("right", "left"):
                s = hover_like_state(t=t, side=side)
                d = rng.normal(size=3)
                dF = perturbed_forces(s, d, cfg)
                sp = WingAeroState(R=s.R, Q=s.Q, xdot=s.xdot + h * d,
                                   Omega=s.Omega, Omega_w=s.Omega_w,
                                   mu=s.mu, side=side)
                sm = WingAeroState(R=s.R, Q=s.Q, xdot=s.xdot - h * d,
                                   Omega=s.Omega, Omega_w=s.Omega_w,
                                   mu=s.mu, side=side)
                fd = (blade_element_forces(sp, cfg).F
                      - blade_element_forces(sm, cfg).F) / (2 * h)
                assert np.allclose(dF, fd, rtol=1e-4,
                                   atol=1e-4 * np.linalg.norm(fd))

    def test_jacobian_columns(self):
        cfg = make_cfg()
        s = hover_like_state()
        J = force_jacobian(s, cfg)
        for i, e in enumerate(np.eye(3)):
            assert np.allclose(J[:, i], perturbed_forces(s, e, cfg))


class TestChordDistributions:
    def test_elliptic_area(self):
        span, area = 0.07, 0.0021
        chord = elliptic_chord(span, area)
        r = np.linspace(0, span, 100001)
        got = np.trapezoid(chord(r), r)
        assert np.isclose(got, area, rtol=1e-6)

    def test_table_interpolation(self):
        chord = chord_from_table([0.0, 0.5, 1.0], [0.01, 0.03, 0.0], 0.07)
        assert np.isclose(chord(0.035), 0.03)
        assert np.isclose(chord(0.0175), 0.02)

    def test_table_validation(self):
        with pytest.raises(ValueError):
            chord_from_table([0.0, 0.5, 0.4], [0.01, 0.02, 0.01], 0.07)
        with pytest.raises(ValueError):
            chord_from_table([0.0, 1.0], [0.01, -0.01], 0.07)


def test_config_validation():
    with pytest.raises(ValueError):
        make_cfg(quadrature_points=4)
    with pytest.raises(ValueError):
        make_cfg(rho_air=-1.0)
    with pytest.raises(ValueError):
        make_cfg(rotational_term="bogus")
