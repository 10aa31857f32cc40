"""Articulated four-body model: body, abdomen, and two wings coupled
through spherical joints.

The mass-matrix blocks are assembled from component mass-center
kinematics: with joint offsets mu_i from the body mass center and
mass-center offsets rho_i from each joint (component frames),

    v_i = xdot + B_i Omega + C_i Omega_i,
    B_i = -R (hat(mu_i) + hat(Q_i rho_i)),   C_i = -R Q_i hat(rho_i),
    omega_i = Q_i^T Omega + Omega_i   (component frame).

Every block is validated against an independent kinetic-energy oracle in
the tests. The reduced position dynamics follow from the time derivative
of the total linear momentum; joint torques are reconstructed per
component by a Newton-Euler balance, which evaluates the same joint rows
of the full equations of motion.
"""

from dataclasses import dataclass, field

import numpy as np

from .liegroup import E3, cross3, hat

_COMPONENTS = ("R", "L", "A")


def _check_inertia(name, I):
    I = np.asarray(I, dtype=float)
    if I.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3")
    if np.abs(I - I.T).max() > 1e-12 * max(np.abs(I).max(), 1e-30):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(I).min() <= 0.0:
        raise ValueError(f"{name} must be positive-definite")
    return I


@dataclass
class MorphologyConfig:
    """Masses, inertias, and joint geometry of the vehicle. SI units.

    The bundled defaults are representative butterfly-scale values
    (total mass ~0.5 g, 7 cm single-wing span). They are NOT the Monarch
    measurements used in the literature, which are published elsewhere.
    """

    m_B: float = 2.0e-4
    m_A: float = 2.5e-4
    m_R: float = 1.0e-5
    m_L: float = 1.0e-5
    I_B: np.ndarray = field(default_factory=lambda: np.diag(
        [5.0e-10, 4.0e-9, 4.0e-9]))
    I_A: np.ndarray = field(default_factory=lambda: np.diag(
        [1.0e-9, 1.3e-8, 1.3e-8]))
    I_R: np.ndarray = field(default_factory=lambda: np.diag(
        [4.1e-9, 7.5e-10, 4.9e-9]))
    I_L: np.ndarray = field(default_factory=lambda: np.diag(
        [4.1e-9, 7.5e-10, 4.9e-9]))
    mu_R: np.ndarray = field(default_factory=lambda: np.array(
        [0.0, 0.006, -0.001]))
    mu_L: np.ndarray = field(default_factory=lambda: np.array(
        [0.0, -0.006, -0.001]))
    mu_A: np.ndarray = field(default_factory=lambda: np.array(
        [-0.008, 0.0, 0.001]))
    rho_R: np.ndarray = field(default_factory=lambda: np.array(
        [0.0, 0.028, 0.0]))
    rho_L: np.ndarray = field(default_factory=lambda: np.array(
        [0.0, -0.028, 0.0]))
    rho_A: np.ndarray = field(default_factory=lambda: np.array(
        [-0.012, 0.0, 0.0]))
    g: float = 9.81

    def __post_init__(self):
        for name in ("m_B", "m_A", "m_R", "m_L"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("I_B", "I_A", "I_R", "I_L"):
            setattr(self, name, _check_inertia(name, getattr(self, name)))
        for name in ("mu_R", "mu_L", "mu_A", "rho_R", "rho_L", "rho_A"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def m(self):
        return self.m_B + self.m_A + self.m_R + self.m_L

    def component(self, key):
        """(mass, inertia, mu, rho) for component key in {R, L, A}."""
        return (getattr(self, f"m_{key}"), getattr(self, f"I_{key}"),
                getattr(self, f"mu_{key}"), getattr(self, f"rho_{key}"))


@dataclass
class GeneralizedState:
    """Configuration (x, R, Q_R, Q_L, Q_A) and velocity xi in R^15."""

    x: np.ndarray
    R: np.ndarray
    Q_R: np.ndarray
    Q_L: np.ndarray
    Q_A: np.ndarray
    xdot: np.ndarray
    Omega: np.ndarray
    Omega_R: np.ndarray
    Omega_L: np.ndarray
    Omega_A: np.ndarray

    @property
    def xi(self):
        return np.concatenate([self.xdot, self.Omega, self.Omega_R,
                               self.Omega_L, self.Omega_A])

    def attitude(self, key):
        return getattr(self, f"Q_{key}")

    def joint_rate(self, key):
        return getattr(self, f"Omega_{key}")


def state_from_motion(motion, x=None, xdot=None) -> GeneralizedState:
    """GeneralizedState from a single-time PrescribedMotion sample."""
    z = np.zeros(3)
    return GeneralizedState(
        x=z if x is None else np.asarray(x, dtype=float),
        R=motion.R, Q_R=motion.Q_R, Q_L=motion.Q_L, Q_A=motion.Q_A,
        xdot=z if xdot is None else np.asarray(xdot, dtype=float),
        Omega=motion.Omega, Omega_R=motion.Omega_R,
        Omega_L=motion.Omega_L, Omega_A=motion.Omega_A,
    )


def coupling_matrices(R, Q, mu, rho):
    """B and C with v_i = xdot + B Omega + C Omega_i."""
    B = -R @ (hat(mu) + hat(Q @ rho))
    C = -R @ Q @ hat(rho)
    return B, C


def coupling_matrices_dot(R, Omega, Q, Omega_i, mu, rho):
    """Time derivatives of B and C along Rdot = R hat(Omega) etc."""
    hO = hat(Omega)
    Bdot = -R @ hO @ (hat(mu) + hat(Q @ rho)) - R @ hat(Q @ cross3(Omega_i, rho))
    Cdot = -R @ hO @ Q @ hat(rho) - R @ Q @ hat(Omega_i) @ hat(rho)
    return Bdot, Cdot


@dataclass
class DynamicsBlocks:
    """Assembled 15x15 mass matrix and the translational coupling blocks."""

    J: np.ndarray                 # 15x15, symmetric positive-definite
    J12: dict                     # per component: m_i B_i
    J13: dict                     # per component: m_i C_i
    K12: dict                     # per component: m_i Bdot_i
    K13: dict                     # per component: m_i Cdot_i
    gravity_force: np.ndarray     # m g e3, inertial


def assemble_blocks(q: GeneralizedState,
                    morph: MorphologyConfig) -> DynamicsBlocks:
    """Mass-matrix blocks and translational coupling terms at one state.

    Raises if the assembled matrix fails positive-definiteness
    (configuration error).
    """
    m_total = morph.m
    J = np.zeros((15, 15))
    J[0:3, 0:3] = m_total * np.eye(3)
    J[3:6, 3:6] = morph.I_B
    J12, J13, K12, K13 = {}, {}, {}, {}
    slc = {"R": slice(6, 9), "L": slice(9, 12), "A": slice(12, 15)}
    for key in _COMPONENTS:
        m_i, I_i, mu_i, rho_i = morph.component(key)
        Q_i = q.attitude(key)
        O_i = q.joint_rate(key)
        B, C = coupling_matrices(q.R, Q_i, mu_i, rho_i)
        Bdot, Cdot = coupling_matrices_dot(q.R, q.Omega, Q_i, O_i,
                                           mu_i, rho_i)
        J12[key] = m_i * B
        J13[key] = m_i * C
        K12[key] = m_i * Bdot
        K13[key] = m_i * Cdot
        s = slc[key]
        J[0:3, 3:6] += m_i * B
        J[0:3, s] = m_i * C
        J[3:6, 3:6] += m_i * B.T @ B + Q_i @ I_i @ Q_i.T
        J[3:6, s] = m_i * B.T @ C + Q_i @ I_i
        J[s, s] = m_i * C.T @ C + I_i
    J = np.triu(J) + np.triu(J, 1).T
    if np.linalg.eigvalsh(J).min() <= 0.0:
        raise ValueError("assembled mass matrix is not positive-definite; "
                         "check the morphology configuration")
    return DynamicsBlocks(J=J, J12=J12, J13=J13, K12=K12, K13=K13,
                          gravity_force=m_total * morph.g * E3)


def kinetic_energy(q: GeneralizedState, morph: MorphologyConfig):
    """Total kinetic energy via the assembled mass matrix."""
    xi = q.xi
    return 0.5 * xi @ assemble_blocks(q, morph).J @ xi


def coupling_force(motion, morph: MorphologyConfig):
    """Translational coupling sum over {R, L, A} at one motion sample:
    J_i12 Omega_dot + J_i13 Omega_dot_i + K_i12 Omega + K_i13 Omega_i.
    """
    total = np.zeros(3)
    for key in _COMPONENTS:
        m_i, _, mu_i, rho_i = morph.component(key)
        Q_i = getattr(motion, f"Q_{key}")
        O_i = getattr(motion, f"Omega_{key}")
        Od_i = getattr(motion, f"Omega_dot_{key}")
        B, C = coupling_matrices(motion.R, Q_i, mu_i, rho_i)
        Bdot, Cdot = coupling_matrices_dot(motion.R, motion.Omega, Q_i, O_i,
                                           mu_i, rho_i)
        total += m_i * (B @ motion.Omega_dot + C @ Od_i
                        + Bdot @ motion.Omega + Cdot @ O_i)
    return total


def reduced_accel(x, xdot, motion, F_R, F_L, morph: MorphologyConfig):
    """Mass-center acceleration from the reduced position dynamics.

    F_R, F_L are resultant wing aerodynamic forces in the wing frames;
    the body/abdomen aerodynamic force is taken as zero. x is unused
    (the dynamics are translation-invariant) but kept for interface
    symmetry with the state.
    """
    aero = motion.R @ (motion.Q_R @ np.asarray(F_R, dtype=float)
                       + motion.Q_L @ np.asarray(F_L, dtype=float))
    c = coupling_force(motion, morph)
    return (aero + morph.m * morph.g * E3 - c) / morph.m


def energy(x, xdot, morph: MorphologyConfig):
    """Total energy of the position dynamics: kinetic plus gravitational
    potential (NED: altitude is -e3 . x)."""
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    return (0.5 * morph.m * np.einsum("...i,...i->...", xdot, xdot)
            - morph.m * morph.g * np.asarray(x)[..., 2])


def energy_rate(xdot, xddot, morph: MorphologyConfig):
    """Analytic time derivative of energy()."""
    xdot = np.asarray(xdot, dtype=float)
    xddot = np.asarray(xddot, dtype=float)
    return (morph.m * np.einsum("...i,...i->...", xdot, xddot)
            - morph.m * morph.g * xdot[..., 2])


def component_accel(motion, xddot, key, morph: MorphologyConfig):
    """Inertial mass-center acceleration of component key."""
    m_i, _, mu_i, rho_i = morph.component(key)
    Q_i = getattr(motion, f"Q_{key}")
    O_i = getattr(motion, f"Omega_{key}")
    Od_i = getattr(motion, f"Omega_dot_{key}")
    B, C = coupling_matrices(motion.R, Q_i, mu_i, rho_i)
    Bdot, Cdot = coupling_matrices_dot(motion.R, motion.Omega, Q_i, O_i,
                                       mu_i, rho_i)
    return (np.asarray(xddot, dtype=float) + B @ motion.Omega_dot
            + C @ Od_i + Bdot @ motion.Omega + Cdot @ O_i)


def joint_torque(motion, xddot, key, morph: MorphologyConfig,
                 F_aero=None, M_aero_root=None):
    """Joint torque of component key in the body frame (Newton-Euler).

    F_aero and M_aero_root are the aerodynamic resultant force and the
    moment about the wing root, both in the component frame; omitted for
    the abdomen. The returned torque tau satisfies P = tau . (Q_i
    Omega_i) for the actuation power at the joint.
    """
    m_i, I_i, mu_i, rho_i = morph.component(key)
    Q_i = getattr(motion, f"Q_{key}")
    O_i = getattr(motion, f"Omega_{key}")
    Od_i = getattr(motion, f"Omega_dot_{key}")
    R = motion.R
    RQ = R @ Q_i

    omega = Q_i.T @ motion.Omega + O_i
    omega_dot = (-cross3(O_i, Q_i.T @ motion.Omega)
                 + Q_i.T @ motion.Omega_dot + Od_i)

    a_cm = component_accel(motion, xddot, key, morph)
    F_aero_in = np.zeros(3) if F_aero is None else RQ @ np.asarray(F_aero)
    F_joint = m_i * a_cm - m_i * morph.g * E3 - F_aero_in

    Hdot = RQ @ (I_i @ omega_dot + cross3(omega, I_i @ omega))
    if M_aero_root is None:
        M_aero_cm = np.zeros(3)
    else:
        M_aero_cm = RQ @ (np.asarray(M_aero_root)
                          - cross3(rho_i, np.asarray(F_aero)))
    tau_inertial = Hdot + cross3(RQ @ rho_i, F_joint) - M_aero_cm
    return R.T @ tau_inertial


def reconstruct_torques(motion, xddot, aero_R, aero_L,
                        morph: MorphologyConfig):
    """Wing and abdomen joint torques (body frame) at one motion sample.

    aero_R / aero_L carry (F, M) in wing frames; abdomen aero is zero.
    Returns (tau_R, tau_L, tau_A).
    """
    tau_R = joint_torque(motion, xddot, "R", morph,
                         F_aero=aero_R.F, M_aero_root=aero_R.M)
    tau_L = joint_torque(motion, xddot, "L", morph,
                         F_aero=aero_L.F, M_aero_root=aero_L.M)
    tau_A = joint_torque(motion, xddot, "A", morph)
    return tau_R, tau_L, tau_A


def joint_power(motion, tau, key):
    """Actuation power tau . (Q_i Omega_i) at the joint of component key."""
    Q_i = getattr(motion, f"Q_{key}")
    O_i = getattr(motion, f"Omega_{key}")
    return float(tau @ (Q_i @ O_i))


def total_mechanical_energy(motion, x, xdot, morph: MorphologyConfig):
    """Full multibody kinetic energy plus gravitational potential of all
    component mass centers (independent of the reduced-state energy)."""
    q = state_from_motion(motion, x=x, xdot=xdot)
    T = kinetic_energy(q, morph)
    x = np.asarray(x, dtype=float)
    U = -morph.m_B * morph.g * (E3 @ x)
    for key in _COMPONENTS:
        m_i, _, mu_i, rho_i = morph.component(key)
        x_i = x + motion.R @ (mu_i + getattr(motion, f"Q_{key}") @ rho_i)
        U += -m_i * morph.g * (E3 @ x_i)
    return T + U


def fit_spring_damper(theta, dtheta, tau):
    """Least-squares torsional spring/damper fit of joint-torque samples.

    Model: tau = -k theta - c dtheta + tau_0. Returns (k, c, tau_0).
    Raises when the regressor is rank-deficient (e.g. constant angle or
    zero rate makes a coefficient unidentifiable).
    """
    theta = np.asarray(theta, dtype=float)
    dtheta = np.asarray(dtheta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if theta.size < 3:
        raise ValueError("need at least 3 samples")
    A = np.column_stack([-theta, -dtheta, np.ones_like(theta)])
    # scale columns for a meaningful rank test on tiny torque magnitudes
    scales = np.abs(A).max(axis=0)
    if np.any(scales < 1e-300):
        raise ValueError("spring-damper fit unidentifiable: degenerate "
                         "regressor column")
    if np.linalg.matrix_rank(A / scales, tol=1e-10) < 3:
        raise ValueError("spring-damper fit unidentifiable: rank-deficient "
                         "regressor")
    coef, *_ = np.linalg.lstsq(A, tau, rcond=None)
    k, c, tau_0 = coef
    return float(k), float(c), float(tau_0)
