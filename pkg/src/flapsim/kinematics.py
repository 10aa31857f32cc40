"""Prescribed motion: wing, body, and abdomen waveforms with analytic
first and second time derivatives, assembled into attitudes and angular
velocities/accelerations.

All evaluators accept a scalar time or an array of times; with an array,
returned quantities gain a leading time axis. Angular velocities are
computed analytically by folding Euler-angle rates through the factored
attitude products, never by finite differences.
"""

from dataclasses import dataclass, replace

import numpy as np

from .liegroup import E1, E2, E3, cross3

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class WingWaveformParams:
    """Parameters of the three wing-angle waveforms for one wing."""

    f: float            # flapping frequency, Hz
    beta: float         # stroke-plane angle, rad
    phi_m: float        # flapping amplitude, rad
    phi_K: float        # flapping shape factor, (0, 1]
    phi_0: float        # flapping offset, rad
    theta_m: float      # pitching amplitude, rad
    theta_C: float      # pitch waveform sharpness, > 0
    theta_0: float      # pitch offset, rad
    theta_a: float      # pitch phase, rad
    psi_m: float        # deviation amplitude, rad
    psi_N: int          # deviation harmonics per period, 1 or 2
    psi_0: float        # deviation offset, rad
    psi_a: float        # deviation phase, rad

    def __post_init__(self):
        if not (0.0 < self.phi_K <= 1.0):
            raise ValueError(f"phi_K must be in (0, 1], got {self.phi_K}")
        if self.theta_C <= 0.0:
            raise ValueError(f"theta_C must be positive, got {self.theta_C}")
        if self.psi_N not in (1, 2):
            raise ValueError(f"psi_N must be 1 or 2, got {self.psi_N}")
        # phi_m/theta_0 may carry a batch axis (vectorized control sweeps)
        worst = np.max(np.abs(self.phi_m) + np.abs(self.phi_0))
        if worst >= np.pi / 2:
            raise ValueError(
                f"infeasible flapping: |phi_m| + |phi_0| = "
                f"{worst:.4f} >= pi/2"
            )

    @property
    def period(self):
        return 1.0 / self.f


@dataclass(frozen=True)
class BodyAbdomenParams:
    """Cosine pitch waveforms for the body and the abdomen."""

    theta_B_m: float
    theta_B_0: float
    theta_B_a: float
    theta_A_m: float
    theta_A_0: float
    theta_A_a: float
    abdomen_fixed: bool = False  # hold theta_A at theta_A_0 with zero rates


def with_offsets(p: WingWaveformParams, d_phi_m=0.0, d_theta_0=0.0,
                 ) -> WingWaveformParams:
    """Wing params with control offsets applied to phi_m and theta_0."""
    return replace(p, phi_m=p.phi_m + d_phi_m, theta_0=p.theta_0 + d_theta_0)


def flap_angle(t, p: WingWaveformParams):
    """Smoothed-triangular flapping angle and its two derivatives."""
    t = np.asarray(t, dtype=float)
    w = TWO_PI * p.f
    A = p.phi_m / np.arcsin(p.phi_K)
    u = p.phi_K * np.cos(w * t)
    du = -p.phi_K * w * np.sin(w * t)
    ddu = -p.phi_K * w * w * np.cos(w * t)
    root = np.sqrt(1.0 - u * u)
    phi = A * np.arcsin(u) + p.phi_0
    dphi = A * du / root
    ddphi = A * (ddu / root + du * du * u / root**3)
    return phi, dphi, ddphi


def pitch_angle(t, p: WingWaveformParams):
    """Hyperbolic-tangent pitching angle and its two derivatives."""
    t = np.asarray(t, dtype=float)
    w = TWO_PI * p.f
    B = p.theta_m / np.tanh(p.theta_C)
    s = np.sin(w * t + p.theta_a)
    ds = w * np.cos(w * t + p.theta_a)
    dds = -w * w * s
    th = np.tanh(p.theta_C * s)
    sech2 = 1.0 - th * th
    theta = B * th + p.theta_0
    dtheta = B * p.theta_C * sech2 * ds
    ddtheta = B * p.theta_C * sech2 * (dds - 2.0 * p.theta_C * th * ds * ds)
    return theta, dtheta, ddtheta


def deviation_angle(t, p: WingWaveformParams):
    """Cosine deviation angle and its two derivatives."""
    t = np.asarray(t, dtype=float)
    w = TWO_PI * p.psi_N * p.f
    arg = w * t + p.psi_a
    psi = p.psi_m * np.cos(arg) + p.psi_0
    dpsi = -p.psi_m * w * np.sin(arg)
    ddpsi = -p.psi_m * w * w * np.cos(arg)
    return psi, dpsi, ddpsi


def body_abdomen_pitch(t, p: BodyAbdomenParams, f):
    """Body and abdomen pitch angles with first/second derivatives.

    Returns (theta_B, dtheta_B, ddtheta_B, theta_A, dtheta_A, ddtheta_A).
    In fixed-abdomen mode theta_A is held at theta_A_0.
    """
    t = np.asarray(t, dtype=float)
    w = TWO_PI * f
    arg_b = w * t + p.theta_B_a
    theta_B = p.theta_B_m * np.cos(arg_b) + p.theta_B_0
    dtheta_B = -p.theta_B_m * w * np.sin(arg_b)
    ddtheta_B = -p.theta_B_m * w * w * np.cos(arg_b)
    if p.abdomen_fixed:
        z = np.zeros_like(t)
        return theta_B, dtheta_B, ddtheta_B, p.theta_A_0 + z, z, z.copy()
    arg_a = w * t + p.theta_A_a
    theta_A = p.theta_A_m * np.cos(arg_a) + p.theta_A_0
    dtheta_A = -p.theta_A_m * w * np.sin(arg_a)
    ddtheta_A = -p.theta_A_m * w * w * np.cos(arg_a)
    return theta_B, dtheta_B, ddtheta_B, theta_A, dtheta_A, ddtheta_A


def _vrot(axis, angle):
    """Stack of single-axis rotations for an array of angles."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    z = np.zeros_like(c)
    o = np.ones_like(c)
    if axis == 0:
        rows = [[o, z, z], [z, c, -s], [z, s, c]]
    elif axis == 1:
        rows = [[c, z, s], [z, o, z], [-s, z, c]]
    else:
        rows = [[c, -s, z], [s, c, z], [z, z, o]]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def axis_chain(factors):
    """Attitude and body-frame rates of a product of single-axis rotations.

    factors is a sequence of (axis_index, angle, rate, accel) with angle
    arrays sharing a common shape. Returns (Q, Omega, Omega_dot) where Q
    has shape (..., 3, 3) and the rates shape (..., 3).

    Folding rule for Q = A @ B with known (omega_A, omega_dot_A):
    omega = B^T omega_A + omega_B and
    omega_dot = B^T omega_dot_A - omega_B x (B^T omega_A) + omega_dot_B.
    """
    axes = (E1, E2, E3)
    axis_i, ang, rate, acc = factors[0]
    Q = _vrot(axis_i, ang)
    a = axes[axis_i]
    omega = np.asarray(rate)[..., None] * a
    omega_dot = np.asarray(acc)[..., None] * a
    for axis_i, ang, rate, acc in factors[1:]:
        B = _vrot(axis_i, ang)
        a = axes[axis_i]
        w_b = np.asarray(rate)[..., None] * a
        wd_b = np.asarray(acc)[..., None] * a
        # B^T v applied with a leading batch axis
        Bt_omega = np.einsum("...ji,...j->...i", B, omega)
        Bt_omega_dot = np.einsum("...ji,...j->...i", B, omega_dot)
        omega = Bt_omega + w_b
        omega_dot = Bt_omega_dot - cross3(w_b, Bt_omega) + wd_b
        Q = Q @ B
    return Q, omega, omega_dot


@dataclass
class PrescribedMotion:
    """Attitudes, angular velocities, and angular accelerations at one or
    more times. Arrays carry a leading time axis when evaluated on one."""

    R: np.ndarray
    Q_R: np.ndarray
    Q_L: np.ndarray
    Q_A: np.ndarray
    Omega: np.ndarray
    Omega_R: np.ndarray
    Omega_L: np.ndarray
    Omega_A: np.ndarray
    Omega_dot: np.ndarray
    Omega_dot_R: np.ndarray
    Omega_dot_L: np.ndarray
    Omega_dot_A: np.ndarray
    # raw angles kept for reporting
    phi_R: np.ndarray = None
    theta_R: np.ndarray = None
    psi_R: np.ndarray = None
    phi_L: np.ndarray = None
    theta_L: np.ndarray = None
    psi_L: np.ndarray = None
    theta_B: np.ndarray = None
    theta_A: np.ndarray = None


def wing_attitude_right(t, p: WingWaveformParams):
    """Right-wing attitude and rates from the waveform parameters."""
    t = np.asarray(t, dtype=float)
    phi, dphi, ddphi = flap_angle(t, p)
    theta, dtheta, ddtheta = pitch_angle(t, p)
    psi, dpsi, ddpsi = deviation_angle(t, p)
    z = np.zeros_like(t)
    Q, omega, omega_dot = axis_chain([
        (1, np.full_like(t, p.beta), z, z),
        (0, phi, dphi, ddphi),
        (2, -psi, -dpsi, -ddpsi),
        (1, theta, dtheta, ddtheta),
    ])
    return Q, omega, omega_dot, (phi, theta, psi)


def wing_attitude_left(t, p: WingWaveformParams):
    """Left-wing attitude and rates (mirrored flapping/deviation signs)."""
    t = np.asarray(t, dtype=float)
    phi, dphi, ddphi = flap_angle(t, p)
    theta, dtheta, ddtheta = pitch_angle(t, p)
    psi, dpsi, ddpsi = deviation_angle(t, p)
    z = np.zeros_like(t)
    Q, omega, omega_dot = axis_chain([
        (1, np.full_like(t, p.beta), z, z),
        (0, -phi, -dphi, -ddphi),
        (2, psi, dpsi, ddpsi),
        (1, theta, dtheta, ddtheta),
    ])
    return Q, omega, omega_dot, (phi, theta, psi)


def prescribed_motion_at(t, wp_right: WingWaveformParams,
                         wp_left: WingWaveformParams,
                         bp: BodyAbdomenParams) -> PrescribedMotion:
    """Evaluate all prescribed attitudes and rates at time(s) t.

    The left wing shares the right wing's waveform family; asymmetric
    flapping for control is expressed through distinct parameter sets.
    """
    t = np.asarray(t, dtype=float)
    Q_R, O_R, Od_R, (phi_R, theta_R, psi_R) = wing_attitude_right(t, wp_right)
    Q_L, O_L, Od_L, (phi_L, theta_L, psi_L) = wing_attitude_left(t, wp_left)
    tB, dtB, ddtB, tA, dtA, ddtA = body_abdomen_pitch(t, bp, wp_right.f)
    R, O_B, Od_B = axis_chain([(1, tB, dtB, ddtB)])
    Q_A, O_A, Od_A = axis_chain([(1, tA, dtA, ddtA)])
    return PrescribedMotion(
        R=R, Q_R=Q_R, Q_L=Q_L, Q_A=Q_A,
        Omega=O_B, Omega_R=O_R, Omega_L=O_L, Omega_A=O_A,
        Omega_dot=Od_B, Omega_dot_R=Od_R, Omega_dot_L=Od_L, Omega_dot_A=Od_A,
        phi_R=phi_R, theta_R=theta_R, psi_R=psi_R,
        phi_L=phi_L, theta_L=theta_L, psi_L=psi_L,
        theta_B=tB, theta_A=tA,
    )
