"""Quasi-steady blade-element aerodynamics for a single wing.

Forces are computed in the wing frame: lift and drag per span-wise node,
integrated over [0, span] by a composite midpoint rule, plus the analytic
first-order force perturbation with respect to the body velocity needed
by the periodic-orbit stability analysis.

Note on the rotational velocity term: the body angular velocity is
resolved into the wing frame as Q^T Omega before crossing with the span
axis. A config switch (`rotational_term="printed"`) reproduces the
alternative Q Omega composition for comparison.
"""

from dataclasses import dataclass, field

import numpy as np

from .liegroup import cross3

# lift/drag coefficient fits (flat-plate experiments), angles in radians:
#   C_L = 0.225 + 1.58 sin(2.13 a - 7.2 deg)
#   C_D = 1.92 - 1.55 cos(2.04 a - 9.82 deg)
_CL_OFF = np.deg2rad(7.2)
_CD_OFF = np.deg2rad(9.82)
_TINY_SPEED = 1e-12


def lift_drag_coefficients(alpha):
    """Lift and drag coefficients for angle of attack alpha in [0, pi/2]."""
    alpha = np.asarray(alpha, dtype=float)
    c_l = 0.225 + 1.58 * np.sin(2.13 * alpha - _CL_OFF)
    c_d = 1.92 - 1.55 * np.cos(2.04 * alpha - _CD_OFF)
    return c_l, c_d


def lift_drag_coefficient_slopes(alpha):
    """d C_L / d alpha and d C_D / d alpha (alpha in radians)."""
    alpha = np.asarray(alpha, dtype=float)
    dcl = 1.58 * np.cos(2.13 * alpha - _CL_OFF) * 2.13
    dcd = 1.55 * np.sin(2.04 * alpha - _CD_OFF) * 2.04
    return dcl, dcd


def angle_of_attack(U):
    """Angle of attack in [0, pi/2] of chord-plane velocity samples.

    U has shape (..., 3). Zero-speed samples are reported as alpha = 0;
    callers treat their force contribution as zero.
    """
    U = np.asarray(U, dtype=float)
    norm = np.linalg.norm(U, axis=-1)
    safe = np.maximum(norm, _TINY_SPEED)
    return np.arccos(np.clip(np.abs(U[..., 0]) / safe, 0.0, 1.0))


def elliptic_chord(span, area):
    """Elliptic-planform chord distribution scaled to a target area.

    c(r) = c0 sqrt(1 - (2 r / span - 1)^2) with integral equal to area.
    A representative stand-in; real planforms go through chord tables.
    """
    c0 = 4.0 * area / (np.pi * span)

    def chord(r):
        x = 2.0 * np.asarray(r, dtype=float) / span - 1.0
        return c0 * np.sqrt(np.clip(1.0 - x * x, 0.0, None))

    return chord


def chord_from_table(r_over_l, chord_m, span):
    """Piecewise-linear chord distribution from tabulated samples."""
    r_over_l = np.asarray(r_over_l, dtype=float)
    chord_m = np.asarray(chord_m, dtype=float)
    if r_over_l.ndim != 1 or r_over_l.shape != chord_m.shape:
        raise ValueError("chord table needs matching 1-d r_over_l, chord_m")
    if np.any(np.diff(r_over_l) <= 0):
        raise ValueError("chord table r_over_l must be strictly increasing")
    if np.any(chord_m < 0):
        raise ValueError("chord values must be non-negative")

    def chord(r):
        return np.interp(np.asarray(r, dtype=float) / span, r_over_l, chord_m)

    return chord


def load_chord_csv(path, span):
    """Chord distribution from a CSV with columns r_over_l, chord_m."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    return chord_from_table(data["r_over_l"], data["chord_m"], span)


@dataclass
class AeroConfig:
    """Air properties, wing geometry, and quadrature resolution."""

    rho_air: float = 1.225          # kg/m^3
    span: float = 0.07              # m, single wing
    wing_area: float = 0.0021      # m^2, used by the default elliptic chord
    quadrature_points: int = 64
    v_wind: np.ndarray = field(default_factory=lambda: np.zeros(3))
    chord: object = None            # callable c(r) in m; default elliptic
    rotational_term: str = "wing_frame"   # or "printed"
    node_rule: str = "auto"         # "auto" | "uniform" | "cosine"

    def __post_init__(self):
        if self.rho_air <= 0 or self.span <= 0:
            raise ValueError("rho_air and span must be positive")
        if self.quadrature_points < 8:
            raise ValueError("quadrature_points must be >= 8")
        if self.rotational_term not in ("wing_frame", "printed"):
            raise ValueError(f"unknown rotational_term {self.rotational_term}")
        if self.node_rule not in ("auto", "uniform", "cosine"):
            raise ValueError(f"unknown node_rule {self.node_rule}")
        self.v_wind = np.asarray(self.v_wind, dtype=float)
        if self.chord is None:
            self.chord = elliptic_chord(self.span, self.wing_area)
            if self.node_rule == "auto":
                # the elliptic planform has square-root tips; cosine
                # stretching keeps midpoint quadrature high-order there
                self.node_rule = "cosine"
        elif self.node_rule == "auto":
            self.node_rule = "uniform"

    def nodes(self):
        """Midpoint quadrature nodes, per-node weights, and chord values.

        Uniform strips for tabulated chords; cosine-stretched strips
        r = span/2 (1 - cos phi) for the smooth elliptic default.
        """
        n = self.quadrature_points
        if self.node_rule == "cosine":
            dphi = np.pi / n
            phi = (np.arange(n) + 0.5) * dphi
            r = 0.5 * self.span * (1.0 - np.cos(phi))
            w = 0.5 * self.span * np.sin(phi) * dphi
        else:
            dr = self.span / n
            r = (np.arange(n) + 0.5) * dr
            w = np.full(n, dr)
        return r, w, self.chord(r)


@dataclass
class WingAeroState:
    """Kinematic inputs of one wing at one instant (body + wing motion)."""

    R: np.ndarray        # body attitude
    Q: np.ndarray        # wing attitude relative to the body
    xdot: np.ndarray     # body velocity, inertial frame
    Omega: np.ndarray    # body angular velocity, body frame
    Omega_w: np.ndarray  # wing angular velocity, wing frame
    mu: np.ndarray       # wing-root offset from the body mass center
    side: str = "right"  # "right" spans +e2, "left" spans -e2


@dataclass
class AeroResultant:
    """Span-integrated lift, drag, moment, and total force (wing frame)."""

    L: np.ndarray
    D: np.ndarray
    M: np.ndarray

    @property
    def F(self):
        return self.L + self.D


def _span_sign(side):
    if side == "right":
        return 1.0
    if side == "left":
        return -1.0
    raise ValueError(f"side must be 'right' or 'left', got {side}")


def velocity_terms(s: WingAeroState, cfg: AeroConfig):
    """Decompose the node velocity as U(r) = G xdot + a + r w.

    G maps the inertial body velocity into the projected wing frame;
    a collects wind and body-rotation terms; w is the span-rotation rate
    term. Lets integrators reuse geometry across velocity evaluations.
    """
    sign = _span_sign(s.side)
    P = np.diag([1.0, 0.0, 1.0])   # removes the span-wise component
    G = P @ s.Q.T @ s.R.T
    a = P @ (s.Q.T @ cross3(s.Omega, s.mu)) - G @ cfg.v_wind
    if cfg.rotational_term == "wing_frame":
        omega_total = s.Q.T @ s.Omega + s.Omega_w
    else:
        omega_total = s.Q @ s.Omega + s.Omega_w
    w = cross3(omega_total, sign * np.array([0.0, 1.0, 0.0]))
    return G, a, w


def chord_velocity(r, s: WingAeroState, cfg: AeroConfig):
    """Projected chord-plane velocity at span position(s) r (wing frame)."""
    G, a, w = velocity_terms(s, cfg)
    r = np.asarray(r, dtype=float)
    return (G @ s.xdot + a) + r[..., None] * w


def forces_from_velocity(U, r, weights, chord, rho_air, span_sign):
    """Integrate blade-element forces given node velocities.

    U: (..., n, 3) node velocities in the wing frame; r: (n,) nodes;
    weights: (n,) quadrature weights; chord: (n,) chord values. Returns
    (L, D, M) with shape (..., 3). Zero-speed nodes contribute nothing.
    """
    U = np.asarray(U, dtype=float)
    normU = np.linalg.norm(U, axis=-1)
    safe = np.maximum(normU, _TINY_SPEED)
    alpha = np.arccos(np.clip(np.abs(U[..., 0]) / safe, 0.0, 1.0))
    c_l, c_d = lift_drag_coefficients(alpha)
    # sgn(e1.U * e3.U) with sgn(0) = +1
    sgn = np.where(U[..., 0] * U[..., 2] < 0.0, -1.0, 1.0)
    live = (normU > _TINY_SPEED).astype(float)
    e2_cross_U = np.stack(
        [U[..., 2], np.zeros_like(normU), -U[..., 0]], axis=-1)
    half_rho_c = 0.5 * rho_air * chord * live
    dL = (half_rho_c * c_l * sgn * normU)[..., None] * e2_cross_U
    dD = -(half_rho_c * c_d * normU)[..., None] * U
    dF = dL + dD
    # moment arm r * (span_sign e2) x dF
    arm = span_sign * r
    dM = np.stack([
        arm * dF[..., 2],
        np.zeros_like(normU),
        -arm * dF[..., 0],
    ], axis=-1)
    w = np.asarray(weights, dtype=float)[..., None]
    L = (dL * w).sum(axis=-2)
    D = (dD * w).sum(axis=-2)
    M = (dM * w).sum(axis=-2)
    return L, D, M


def blade_element_forces(s: WingAeroState, cfg: AeroConfig) -> AeroResultant:
    """Span-integrated aerodynamic resultants for one wing (wing frame)."""
    r, w, chord = cfg.nodes()
    U = chord_velocity(r, s, cfg)
    L, D, M = forces_from_velocity(U, r, w, chord, cfg.rho_air,
                                   _span_sign(s.side))
    return AeroResultant(L=L, D=D, M=M)


def perturbed_forces(s: WingAeroState, dxdot, cfg: AeroConfig):
    """First-order force perturbation dF for a body-velocity perturbation.

    Chain rule through the blade-element expressions with
    dU = (I - e2 e2^T) Q^T R^T dxdot (identical at every node), the
    projector form of d alpha, and the coefficient slopes. Nodes where
    sin(alpha) < 1e-6 fall back to a finite difference for d alpha.
    """
    dxdot = np.asarray(dxdot, dtype=float)
    r, wq, chord = cfg.nodes()
    G, a, w = velocity_terms(s, cfg)
    U = (G @ s.xdot + a) + r[..., None] * w
    dU = G @ dxdot

    normU = np.linalg.norm(U, axis=-1)
    safe = np.maximum(normU, _TINY_SPEED)
    alpha = np.arccos(np.clip(np.abs(U[..., 0]) / safe, 0.0, 1.0))
    sin_a = np.sin(alpha)

    U_dot_dU = U @ dU
    proj_dU = dU - U * (U_dot_dU / safe**2)[..., None]
    sgn_u1 = np.where(U[..., 0] < 0.0, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dalpha = (-sgn_u1 / sin_a) * proj_dU[..., 0] / safe
    degenerate = sin_a < 1e-6
    if np.any(degenerate):
        h = 1e-6
        scale = safe / max(np.linalg.norm(dU), _TINY_SPEED)
        hh = (h * scale)[..., None]
        a_p = angle_of_attack(U + hh * dU)
        a_m = angle_of_attack(U - hh * dU)
        dalpha_fd = (a_p - a_m) / (2.0 * h * scale)
        dalpha = np.where(degenerate, dalpha_fd, dalpha)

    c_l, c_d = lift_drag_coefficients(alpha)
    dcl_da, dcd_da = lift_drag_coefficient_slopes(alpha)
    dc_l = dcl_da * dalpha
    dc_d = dcd_da * dalpha

    sgn = np.where(U[..., 0] * U[..., 2] < 0.0, -1.0, 1.0)
    live = (normU > _TINY_SPEED).astype(float)
    e2xU = np.stack([U[..., 2], np.zeros_like(normU), -U[..., 0]], axis=-1)
    e2xdU = np.array([dU[2], 0.0, -dU[0]])
    half_rho_c = 0.5 * cfg.rho_air * chord * live

    coef = half_rho_c * sgn
    ddL = (
        (coef * dc_l * normU)[..., None] * e2xU
        + (coef * c_l * normU)[..., None] * e2xdU
        + (coef * c_l * U_dot_dU / safe)[..., None] * e2xU
    )
    ddD = -(
        (half_rho_c * dc_d * normU)[..., None] * U
        + (half_rho_c * c_d * U_dot_dU / safe)[..., None] * U
        + (half_rho_c * c_d * normU)[..., None] * dU
    )
    return ((ddL + ddD) * wq[..., None]).sum(axis=-2)


def aero_power(s: WingAeroState, cfg: AeroConfig):
    """Power delivered by the air to the wing, integrated span-wise.

    Lift is orthogonal to the local velocity, so only drag contributes:
    P = -integral of (rho/2) c C_D |U|^3 dr. Always non-positive.
    """
    r, w, chord = cfg.nodes()
    U = chord_velocity(r, s, cfg)
    normU = np.linalg.norm(U, axis=-1)
    _, c_d = lift_drag_coefficients(angle_of_attack(U))
    return float(-(0.5 * cfg.rho_air * chord * c_d * normU**3 * w).sum())


def force_jacobian(s: WingAeroState, cfg: AeroConfig):
    """3x3 Jacobian dF/d(xdot) in the wing frame (columns by linearity)."""
    cols = [perturbed_forces(s, e, cfg) for e in np.eye(3)]
    return np.stack(cols, axis=-1)
