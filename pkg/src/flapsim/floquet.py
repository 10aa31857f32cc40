"""Stability analysis of periodic flapping flight.

The variational dynamics about a periodic trajectory form a linear system
with T-periodic coefficients. Propagating its fundamental matrix over one
period yields the monodromy matrix, whose eigenvalues (characteristic
multipliers) decide orbital stability. The open-loop coefficient matrix
is assembled analytically from the aerodynamic force sensitivities; the
closed-loop one is obtained by numeric differencing of the controlled
right-hand side.
"""

from dataclasses import dataclass

import numpy as np

from .aero import AeroConfig, force_jacobian
from .multibody import MorphologyConfig
from .simulate import MotionTable, SimConfig, _wing_states, integrate, rk4_step


@dataclass
class PeriodicLinearSystem:
    """Time-periodic linear system d(delta)/dt = A(t) delta."""

    n: int
    A: callable
    period: float

    def __post_init__(self):
        if self.n not in (6, 9):
            raise ValueError("state dimension must be 6 or 9")
        if self.period <= 0:
            raise ValueError("period must be positive")


@dataclass
class MonodromyResult:
    M: np.ndarray
    multipliers: np.ndarray
    exponents: np.ndarray
    eigenvectors: np.ndarray
    period: float
    t_samples: np.ndarray
    Psi_samples: np.ndarray
    defective: bool = False

    def periodic_modes(self):
        """Samples of p_i(t) = Psi(t) v_i exp(-mu_i t) for each mode."""
        # shape (n_t, n_state, n_modes)
        decay = np.exp(-np.outer(self.t_samples, self.exponents))
        modes = np.einsum("tij,jk->tik", self.Psi_samples.astype(complex),
                          self.eigenvectors)
        return modes * decay[:, None, :]


def make_openloop_system(wp_right, wp_left, bp, xdot0,
                         morph: MorphologyConfig, aero: AeroConfig,
                         steps_per_period: int = 1000) -> PeriodicLinearSystem:
    """Analytic variational system about one period of the nominal motion.

    Position perturbations do not feed back into the forces, so the
    coefficient matrix has an identity block mapping velocity error to
    position-error rate and a single nontrivial block: the body-frame
    aerodynamic force sensitivity to body velocity.
    """
    T = wp_right.period
    # nominal velocity on the half-step grid used by the stage times
    fine = SimConfig(steps_per_period=2 * steps_per_period, periods=1)
    traj = integrate(np.zeros(3), xdot0, wp_right, wp_left, bp, morph,
                     fine, aero=aero)
    if traj.diverged:
        raise RuntimeError("nominal trajectory diverged; cannot linearize")
    xdot_grid = traj.xdot
    table = MotionTable(wp_right, wp_left, bp, steps_per_period)
    n_grid = 2 * steps_per_period
    dt_half = T / n_grid

    def A(t):
        j = int(round(t / dt_half))
        motion = table.at(t)
        xdot = xdot_grid[j % n_grid]
        sR, sL = _wing_states(motion, xdot, morph)
        JR = force_jacobian(sR, aero)
        JL = force_jacobian(sL, aero)
        out = np.zeros((6, 6))
        out[0:3, 3:6] = np.eye(3)
        out[3:6, 3:6] = (motion.R @ (motion.Q_R @ JR + motion.Q_L @ JL)) / morph.m
        return out

    return PeriodicLinearSystem(n=6, A=A, period=T)


def numeric_A(rhs, t, y_nominal, h_rel: float = 1e-6,
              h_floor: float = 1e-3) -> np.ndarray:
    """Central-difference Jacobian of rhs(t, y) at a nominal state.

    Step sizes scale with each component's magnitude, with a floor so
    near-zero components still get a sensible perturbation.
    """
    y0 = np.asarray(y_nominal, dtype=float)
    n = y0.size
    out = np.zeros((n, n))
    for j in range(n):
        h = h_rel * max(abs(y0[j]), h_floor)
        e = np.zeros(n)
        e[j] = h
        out[:, j] = (rhs(t, y0 + e) - rhs(t, y0 - e)) / (2 * h)
    return out


def monodromy(sys: PeriodicLinearSystem, steps_per_period: int = 1000,
              t0: float = 0.0) -> MonodromyResult:
    """Fundamental matrix over one period and its spectral data.

    The characteristic exponents use the principal logarithm branch and
    are therefore defined modulo 2*pi*i/T.
    """
    n = sys.n
    T = sys.period
    dt = T / steps_per_period
    Psi = np.eye(n)
    ts = np.zeros(steps_per_period + 1)
    samples = np.zeros((steps_per_period + 1, n, n))
    samples[0] = Psi

    def f(t, y):
        return (sys.A(t0 + t) @ y.reshape(n, n)).ravel()

    y = Psi.ravel()
    for k in range(steps_per_period):
        y = rk4_step(f, k * dt, y, dt)
        ts[k + 1] = (k + 1) * dt
        samples[k + 1] = y.reshape(n, n)

    M = samples[-1]
    rho, V = np.linalg.eig(M)
    defective = np.linalg.cond(V) > 1e12
    mu = np.log(rho.astype(complex)) / T
    return MonodromyResult(M=M, multipliers=rho, exponents=mu,
                           eigenvectors=V, period=T, t_samples=ts,
                           Psi_samples=samples, defective=defective)


_BLOCKS = {"position": (0, 3), "velocity": (3, 6), "integral": (6, 9)}


def mode_report(result: MonodromyResult):
    """Classify each mode by dominant state block and symmetry plane.

    Returns a list of dicts sorted by multiplier magnitude, largest
    first. The longitudinal plane couples the first and third axes; the
    lateral direction is the second axis.
    """
    n = result.M.shape[0]
    report = []
    order = np.argsort(-np.abs(result.multipliers))
    for i in order:
        v = result.eigenvectors[:, i]
        rho = result.multipliers[i]
        resid = np.linalg.norm(result.M @ v - rho * v) / np.linalg.norm(v)
        energies = {}
        for name, (a, b) in _BLOCKS.items():
            if a < n:
                energies[name] = float(np.linalg.norm(v[a:min(b, n)]) ** 2)
        dominant = max(energies, key=energies.get)
        lon = lat = 0.0
        for a in range(0, n, 3):
            lon += abs(v[a]) ** 2 + abs(v[a + 2]) ** 2
            lat += abs(v[a + 1]) ** 2
        plane = "longitudinal" if lon >= lat else "lateral"
        report.append({
            "multiplier": complex(rho),
            "exponent": complex(result.exponents[i]),
            "magnitude": float(abs(rho)),
            "dominant_block": dominant,
            "plane": plane,
            "eigen_residual": float(resid),
            "stable": bool(abs(rho) <= 1.0 + 1e-9),
        })
    return report
