"""Fixed-step time integration of the reduced flapping-flight dynamics.

The wing, body, and abdomen attitudes are prescribed analytic functions of
time, so only the body position and velocity are integrated. A classic
fourth-order Runge-Kutta scheme with a fixed step keeps the sampling
uniform and reproducible, which the periodic linearization downstream
relies on. Prescribed attitudes at the repeating integrator stage times
are evaluated once per parameter set and reused.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .aero import (AeroConfig, AeroResultant, WingAeroState, aero_power,
                   blade_element_forces)
from .kinematics import (BodyAbdomenParams, PrescribedMotion,
                         WingWaveformParams, prescribed_motion_at)
from .multibody import (MorphologyConfig, energy, energy_rate, joint_power,
                        reconstruct_torques, reduced_accel)


@dataclass(frozen=True)
class SimConfig:
    steps_per_period: int = 1000
    periods: int = 1
    record_stride: int = 1
    integrator: str = "rk4"
    # torque/power reconstruction at recorded samples costs roughly as
    # much as the step itself; optimizer objective evaluations skip it
    record_torques: bool = True

    def __post_init__(self):
        if self.steps_per_period < 100:
            raise ValueError("steps_per_period must be at least 100")
        if self.periods < 1:
            raise ValueError("periods must be at least 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")
        if self.integrator != "rk4":
            raise ValueError(f"unknown integrator {self.integrator!r}")


@dataclass
class Trajectory:
    """Uniformly sampled trajectory with force, energy, and torque series."""

    t: np.ndarray
    x: np.ndarray
    xdot: np.ndarray
    R: np.ndarray
    Q_R: np.ndarray
    Q_L: np.ndarray
    Q_A: np.ndarray
    F_R: np.ndarray
    F_L: np.ndarray
    E: np.ndarray
    E_dot: np.ndarray
    tau_R: np.ndarray
    tau_L: np.ndarray
    tau_A: np.ndarray
    P_R: np.ndarray
    P_L: np.ndarray
    P_A: np.ndarray
    P_aero: np.ndarray
    theta_A: np.ndarray
    Omega_A: np.ndarray
    theta_B: np.ndarray = None
    phi_R: np.ndarray = None
    theta_R: np.ndarray = None
    psi_R: np.ndarray = None
    diverged: bool = False
    t_last_valid: float = None
    ierr_final: np.ndarray = None
    xdot_final: np.ndarray = None
    x_final: np.ndarray = None

    CSV_COLUMNS = ("t,x1,x2,x3,v1,v2,v3,FR1,FR2,FR3,FL1,FL2,FL3,"
                   "E,Edot,tauR1,tauR2,tauR3,tauL1,tauL2,tauL3,"
                   "tauA1,tauA2,tauA3,PR,PL,PA,Paero,thetaA,OmegaA2,"
                   "thetaB,phiR,thetaR,psiR")

    def to_csv(self, path):
        cols = np.column_stack([
            self.t, self.x, self.xdot, self.F_R, self.F_L,
            self.E, self.E_dot, self.tau_R, self.tau_L, self.tau_A,
            self.P_R, self.P_L, self.P_A, self.P_aero,
            self.theta_A, self.Omega_A[:, 1],
            self.theta_B, self.phi_R, self.theta_R, self.psi_R,
        ])
        np.savetxt(path, cols, delimiter=",", header=self.CSV_COLUMNS,
                   comments="")


def _motion_slice(m: PrescribedMotion, k) -> PrescribedMotion:
    """Pick the k-th time sample out of a vectorized evaluation."""
    fields = {}
    for f in dataclasses.fields(PrescribedMotion):
        v = getattr(m, f.name)
        fields[f.name] = None if v is None else v[k]
    return PrescribedMotion(**fields)


class MotionTable:
    """Prescribed motion evaluated on the RK4 stage-time grid.

    With a fixed step dt = T/n the stage times modulo the period fall on
    the half-step grid j*dt/2, so one vectorized evaluation per parameter
    set covers every stage of every step.
    """

    def __init__(self, wp_right, wp_left, bp, steps_per_period):
        self.period = wp_right.period
        self.n = 2 * steps_per_period
        tg = np.arange(self.n) * (self.period / (2 * steps_per_period))
        self._table = prescribed_motion_at(tg, wp_right, wp_left, bp)
        self._dt_half = self.period / self.n
        self.wp_right, self.wp_left, self.bp = wp_right, wp_left, bp

    def at(self, t):
        j = int(round(t / self._dt_half)) % self.n
        return _motion_slice(self._table, j)


def _wing_states(motion, xdot, morph):
    sR = WingAeroState(R=motion.R, Q=motion.Q_R, xdot=xdot,
                       Omega=motion.Omega, Omega_w=motion.Omega_R,
                       mu=morph.mu_R, side="right")
    sL = WingAeroState(R=motion.R, Q=motion.Q_L, xdot=xdot,
                       Omega=motion.Omega, Omega_w=motion.Omega_L,
                       mu=morph.mu_L, side="left")
    return sR, sL


def _accel(motion, x, xdot, morph, aero):
    if aero is None:
        F_R = F_L = np.zeros(3)
        res_R = res_L = None
    else:
        sR, sL = _wing_states(motion, xdot, morph)
        res_R = blade_element_forces(sR, aero)
        res_L = blade_element_forces(sL, aero)
        F_R, F_L = res_R.F, res_L.F
    return reduced_accel(x, xdot, motion, F_R, F_L, morph), res_R, res_L


def rk4_step(f, t, y, dt):
    """One classic Runge-Kutta step of y' = f(t, y)."""
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(x0, xdot0, wp_right: WingWaveformParams,
              wp_left: WingWaveformParams, bp: BodyAbdomenParams,
              morph: MorphologyConfig, sim: SimConfig,
              aero: AeroConfig = None, controller=None,
              ierr0=None) -> Trajectory:
    """Propagate the body position over `sim.periods` flapping periods.

    `aero=None` integrates with aerodynamic forces switched off (useful
    for ballistic checks). A controller, when given, is consulted at its
    own cadence and may replace the waveform parameter sets; the
    controller's integral-error state is advanced alongside the body
    state.
    """
    x = np.asarray(x0, dtype=float).copy()
    xdot = np.asarray(xdot0, dtype=float).copy()
    T = wp_right.period
    n_steps = sim.steps_per_period * sim.periods
    dt = T / sim.steps_per_period

    ierr = np.zeros(3) if ierr0 is None else np.asarray(ierr0, dtype=float).copy()
    table = MotionTable(wp_right, wp_left, bp, sim.steps_per_period)

    rec_idx = list(range(0, n_steps + 1, sim.record_stride))
    if rec_idx[-1] != n_steps:
        rec_idx.append(n_steps)
    n_rec = len(rec_idx)
    rec_pos = {k: i for i, k in enumerate(rec_idx)}

    out = {
        "t": np.zeros(n_rec), "x": np.zeros((n_rec, 3)),
        "xdot": np.zeros((n_rec, 3)),
        "R": np.zeros((n_rec, 3, 3)), "Q_R": np.zeros((n_rec, 3, 3)),
        "Q_L": np.zeros((n_rec, 3, 3)), "Q_A": np.zeros((n_rec, 3, 3)),
        "F_R": np.zeros((n_rec, 3)), "F_L": np.zeros((n_rec, 3)),
        "E": np.zeros(n_rec), "E_dot": np.zeros(n_rec),
        "tau_R": np.zeros((n_rec, 3)), "tau_L": np.zeros((n_rec, 3)),
        "tau_A": np.zeros((n_rec, 3)), "P_R": np.zeros(n_rec),
        "P_L": np.zeros(n_rec), "P_A": np.zeros(n_rec),
        "P_aero": np.zeros(n_rec), "theta_A": np.zeros(n_rec),
        "Omega_A": np.zeros((n_rec, 3)), "theta_B": np.zeros(n_rec),
        "phi_R": np.zeros(n_rec), "theta_R": np.zeros(n_rec),
        "psi_R": np.zeros(n_rec),
    }
    diverged = False
    t_last_valid = 0.0

    def record(i, k, t, x, xdot, motion):
        acc, res_R, res_L = _accel(motion, x, xdot, morph, aero)
        out["t"][i] = t
        out["x"][i] = x
        out["xdot"][i] = xdot
        out["R"][i], out["Q_R"][i] = motion.R, motion.Q_R
        out["Q_L"][i], out["Q_A"][i] = motion.Q_L, motion.Q_A
        out["E"][i] = energy(x, xdot, morph)
        out["E_dot"][i] = energy_rate(xdot, acc, morph)
        if res_R is not None:
            out["F_R"][i], out["F_L"][i] = res_R.F, res_L.F
        if sim.record_torques:
            if res_R is not None:
                tau_R, tau_L, tau_A = reconstruct_torques(
                    motion, acc, res_R, res_L, morph)
                sR, sL = _wing_states(motion, xdot, morph)
                out["P_aero"][i] = aero_power(sR, aero) + aero_power(sL, aero)
            else:
                zero = AeroResultant(L=np.zeros(3), D=np.zeros(3),
                                     M=np.zeros(3))
                tau_R, tau_L, tau_A = reconstruct_torques(
                    motion, acc, zero, zero, morph)
            out["tau_R"][i], out["tau_L"][i] = tau_R, tau_L
            out["tau_A"][i] = tau_A
            out["P_R"][i] = joint_power(motion, tau_R, "R")
            out["P_L"][i] = joint_power(motion, tau_L, "L")
            out["P_A"][i] = joint_power(motion, tau_A, "A")
        if motion.theta_A is not None:
            out["theta_A"][i] = motion.theta_A
        out["Omega_A"][i] = motion.Omega_A
        if motion.theta_B is not None:
            out["theta_B"][i] = motion.theta_B
        if motion.phi_R is not None:
            out["phi_R"][i] = motion.phi_R
            out["theta_R"][i] = motion.theta_R
            out["psi_R"][i] = motion.psi_R

    record(0, 0, 0.0, x, xdot, table.at(0.0))

    for k in range(n_steps):
        t = k * dt
        if controller is not None and controller.due(k, sim.steps_per_period):
            new = controller.plan(t, x, xdot, ierr)
            if new is not None:
                wp_right, wp_left, bp = new
                table = MotionTable(wp_right, wp_left, bp,
                                    sim.steps_per_period)

        def deriv(tt, y):
            xx, vv = y[:3], y[3:6]
            motion = table.at(tt)
            acc = _accel(motion, xx, vv, morph, aero)[0]
            de = (controller.reference(tt) - xx) if controller is not None \
                else np.zeros(3)
            return np.concatenate([vv, acc, de])

        y = rk4_step(deriv, t, np.concatenate([x, xdot, ierr]), dt)
        x, xdot, ierr = y[:3], y[3:6], y[6:9]
        if not np.all(np.isfinite(y)):
            diverged = True
            break
        t_last_valid = (k + 1) * dt
        if (k + 1) in rec_pos:
            record(rec_pos[k + 1], k + 1, t_last_valid, x, xdot,
                   table.at(t_last_valid))

    if diverged:
        # truncate the records to the valid prefix
        keep = out["t"] <= t_last_valid
        keep[0] = True
        for key in out:
            out[key] = out[key][keep]

    return Trajectory(**out, diverged=diverged, t_last_valid=t_last_valid,
                      ierr_final=ierr, xdot_final=xdot.copy(),
                      x_final=x.copy())


def periodicity_residual(wp_right, wp_left, bp, xdot0,
                         morph: MorphologyConfig, sim: SimConfig,
                         aero: AeroConfig = None):
    """Position and velocity mismatch after one flapping period.

    The dynamics have no explicit position dependence, so the orbit is
    anchored at x(0) = 0 and only the initial velocity matters.
    """
    one = dataclasses.replace(sim, periods=1)
    traj = integrate(np.zeros(3), xdot0, wp_right, wp_left, bp, morph,
                     one, aero=aero)
    if traj.diverged:
        return np.inf, np.inf
    dx = np.linalg.norm(traj.x_final - traj.x[0])
    dv = np.linalg.norm(traj.xdot_final - traj.xdot[0])
    return dx, dv
