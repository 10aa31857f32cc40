"""Feedback control of the hovering orbit.

The body attitude and wing kinematics stay prescribed; feedback acts by
nudging four waveform parameters each wingbeat: a symmetric stroke
amplitude offset, an antisymmetric (left/right) stroke amplitude offset,
a pitch offset, and an abdomen pitch amplitude offset. A PID law turns
tracking error into a demanded change of the cycle-averaged force, and a
sensitivity table identified around the orbit maps that demand back to
parameter offsets: a minimum-norm resolution for the longitudinal plane
and a scalar inversion for the lateral direction.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .aero import AeroConfig, lift_drag_coefficients
from .kinematics import (BodyAbdomenParams, WingWaveformParams,
                         prescribed_motion_at, with_offsets)
from .liegroup import cross3, hat
from .multibody import MorphologyConfig, coupling_matrices, coupling_matrices_dot
from .simulate import MotionTable, SimConfig, _motion_slice, integrate


@dataclass(frozen=True)
class Gains:
    K_P: float
    K_D: float
    K_I: float

    def __post_init__(self):
        if min(self.K_P, self.K_D, self.K_I) <= 0:
            raise ValueError("all gains must be positive")

    def characteristic_roots(self):
        """Roots of s^3 + K_D s^2 + K_P s + K_I, the per-axis closed-loop
        poles of the idealized averaged dynamics."""
        return np.roots([1.0, self.K_D, self.K_P, self.K_I])


@dataclass
class ControlParams:
    """Per-cycle waveform offsets commanded by the controller."""

    dphi_ms: float = 0.0   # symmetric stroke-amplitude offset
    dphi_mk: float = 0.0   # antisymmetric stroke-amplitude offset
    dtheta_0: float = 0.0  # pitch offset (both wings)
    dtheta_Am: float = 0.0  # abdomen pitch-amplitude offset

    def as_array(self):
        return np.array([self.dphi_ms, self.dphi_mk, self.dtheta_0,
                         self.dtheta_Am])


LONGITUDINAL_PARAMS = ("phi_ms", "theta_0", "theta_Am")
LATERAL_PARAM = "phi_mk"


def saturated_offsets(wp: WingWaveformParams, cp: ControlParams,
                      delta_limit: float = 0.25):
    """Offset vector scaled uniformly into the feasible box.

    The whole vector shrinks together so that no offset exceeds
    delta_limit and the perturbed stroke amplitude stays strictly inside
    |phi_m| + |phi_0| < pi/2; the force direction the allocation chose
    is preserved under large demands.
    """
    c = cp.as_array()
    margin = np.pi / 2 - abs(wp.phi_0) - abs(wp.phi_m) - 1e-6
    peak = np.abs(c).max()
    stroke = abs(c[0]) + abs(c[1])
    scale = min(1.0,
                delta_limit / peak if peak > 0 else 1.0,
                margin / stroke if stroke > 0 else 1.0)
    return scale * c


def apply_control(wp: WingWaveformParams, bp: BodyAbdomenParams,
                  cp: ControlParams, delta_limit: float = 0.25):
    """Perturbed right/left wing and body parameter sets.

    Saturation scales the whole offset vector uniformly so that no
    offset exceeds delta_limit and the perturbed stroke amplitude stays
    strictly inside its feasibility region (|phi_m| + |phi_0| < pi/2).
    Scaling, rather than per-component clipping, preserves the force
    direction the allocation chose when the demand is large.
    """
    c = saturated_offsets(wp, cp, delta_limit)
    wp_R = with_offsets(wp, d_phi_m=c[0] + c[1], d_theta_0=c[2])
    wp_L = with_offsets(wp, d_phi_m=c[0] - c[1], d_theta_0=c[2])
    bp2 = dataclasses.replace(bp, theta_A_m=bp.theta_A_m + c[3])
    return wp_R, wp_L, bp2


def pid_demand(dx, dxdot, dI, gains: Gains, mass: float):
    """Demanded change of the cycle-averaged force from tracking errors."""
    dx = np.asarray(dx, dtype=float)
    dxdot = np.asarray(dxdot, dtype=float)
    dI = np.asarray(dI, dtype=float)
    return mass * (gains.K_P * dx + gains.K_D * dxdot + gains.K_I * dI)


def coupled_force(motion, F_R, F_L, morph: MorphologyConfig):
    """Net translational force from wing aerodynamics and the abdomen
    reaction at one motion sample (inertial frame, gravity excluded)."""
    aero = motion.R @ (motion.Q_R @ np.asarray(F_R, dtype=float)
                       + motion.Q_L @ np.asarray(F_L, dtype=float))
    _, C = coupling_matrices(motion.R, motion.Q_A, morph.mu_A, morph.rho_A)
    _, Cdot = coupling_matrices_dot(motion.R, motion.Omega, motion.Q_A,
                                    motion.Omega_A, morph.mu_A, morph.rho_A)
    reaction = morph.m_A * (C @ motion.Omega_dot_A + Cdot @ motion.Omega_A)
    return aero - reaction


def coupled_force_series(traj, wp_R, wp_L, bp, morph: MorphologyConfig):
    """coupled_force evaluated at every recorded trajectory sample."""
    motions = prescribed_motion_at(traj.t, wp_R, wp_L, bp)
    out = np.zeros((len(traj.t), 3))
    for k in range(len(traj.t)):
        out[k] = coupled_force(_motion_slice(motions, k), traj.F_R[k],
                               traj.F_L[k], morph)
    return out


def sign_split_mean(samples):
    """Means of the positive-valued and negative-valued samples.

    Returns (mean_positive, mean_negative); an empty subset yields None
    for that side. Samples are assumed uniformly spaced in time, so the
    subset time-average reduces to the plain mean.
    """
    s = np.asarray(samples, dtype=float)
    pos = s[s > 0.0]
    neg = s[s < 0.0]
    mean_p = float(pos.mean()) if pos.size else None
    mean_n = float(neg.mean()) if neg.size else None
    return mean_p, mean_n


@dataclass
class SensitivityTable:
    """Slopes of the sign-split mean forces w.r.t. the control offsets.

    Keys of `slopes` and `r2` are (param, component, branch) with param
    in {phi_ms, phi_mk, theta_0, theta_Am}, component in {0, 1, 2}, and
    branch in {p, n}. `nominal` maps (component, branch) to the
    unperturbed mean. Entries whose sweep was one-sided are absent.
    """

    slopes: dict
    nominal: dict
    r2: dict
    flagged: list = field(default_factory=list)
    half_width: float = 0.1
    points: int = 11

    def longitudinal_matrix(self, branches):
        """2x3 map from (phi_ms, theta_0, theta_Am) offsets to the mean
        force changes in the first and third axes. `branches` picks the
        p/n slope per force row."""
        S = np.zeros((2, 3))
        for i, comp in enumerate((0, 2)):
            for j, param in enumerate(LONGITUDINAL_PARAMS):
                key = (param, comp, branches[i])
                if key not in self.slopes:
                    raise AllocationError(f"missing slope for {key}")
                S[i, j] = self.slopes[key]
        return S

    def lateral_slope(self):
        # the lateral mean force is zero on the symmetric nominal orbit,
        # so its sensitivity uses the plain mean rather than a sign branch
        key = (LATERAL_PARAM, 1, "m")
        if key not in self.slopes:
            raise AllocationError(f"missing slope for {key}")
        return self.slopes[key]

    def to_json(self, path):
        import json

        def enc(d):
            return {"|".join(map(str, k)): v for k, v in d.items()}

        payload = {"slopes": enc(self.slopes), "nominal": enc(self.nominal),
                   "r2": enc(self.r2),
                   "flagged": ["|".join(map(str, k)) for k in self.flagged],
                   "half_width": self.half_width, "points": self.points}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        import json
        with open(path) as fh:
            payload = json.load(fh)

        def dec3(d):
            return {(k.split("|")[0], int(k.split("|")[1]), k.split("|")[2]): v
                    for k, v in d.items()}

        def dec2(d):
            return {(int(k.split("|")[0]), k.split("|")[1]): v
                    for k, v in d.items()}

        return cls(slopes=dec3(payload["slopes"]),
                   nominal=dec2(payload["nominal"]),
                   r2=dec3(payload["r2"]),
                   flagged=[(s.split("|")[0], int(s.split("|")[1]),
                             s.split("|")[2])
                            for s in payload["flagged"]],
                   half_width=payload["half_width"],
                   points=payload["points"])


class AllocationError(RuntimeError):
    """Raised when the demanded force cannot be mapped to offsets."""


_PARAM_TO_CP = {
    "phi_ms": "dphi_ms", "phi_mk": "dphi_mk",
    "theta_0": "dtheta_0", "theta_Am": "dtheta_Am",
}


def identify_sensitivities(wp: WingWaveformParams, bp: BodyAbdomenParams,
                           v0, morph: MorphologyConfig, aero: AeroConfig,
                           sim: SimConfig, half_width: float = 0.1,
                           points: int = 11,
                           r2_threshold: float = 0.9) -> SensitivityTable:
    """Sweep each control offset around the orbit and fit force slopes.

    Each offset is varied on a symmetric grid; one period is simulated
    per grid point and the sign-split means of the coupled force are
    recorded. Slopes are least-squares lines constrained through the
    nominal point; fits with R^2 below the threshold are flagged.
    """
    if half_width <= 0:
        raise ValueError("sweep half_width must be positive")
    if points < 3:
        raise ValueError("sweep needs at least 3 points")
    grid = np.linspace(-half_width, half_width, points)
    v0 = np.asarray(v0, dtype=float)
    one = dataclasses.replace(sim, periods=1, record_stride=1,
                              record_torques=False)

    def means_for(cp):
        wp_R, wp_L, bp2 = apply_control(wp, bp, cp, delta_limit=np.inf)
        traj = integrate(np.zeros(3), v0, wp_R, wp_L, bp2, morph, one,
                         aero=aero)
        fa = coupled_force_series(traj, wp_R, wp_L, bp2, morph)
        out = []
        for c in range(3):
            p, n = sign_split_mean(fa[:, c])
            out.append({"p": p, "n": n, "m": float(fa[:, c].mean())})
        return out

    nominal_means = means_for(ControlParams())
    nominal = {}
    for comp in range(3):
        for b, val in nominal_means[comp].items():
            if val is not None:
                nominal[(comp, b)] = val

    slopes, r2, flagged = {}, {}, []
    slope_floor = 1e-10  # below this the channel simply does not respond
    for param in LONGITUDINAL_PARAMS + (LATERAL_PARAM,):
        sweep = {}
        for d in grid:
            cp = ControlParams(**{_PARAM_TO_CP[param]: float(d)})
            sweep[d] = means_for(cp)
        for comp in range(3):
            for b in ("p", "n", "m"):
                y0 = nominal_means[comp][b]
                if y0 is None:
                    continue
                ds, ys = [], []
                for d in grid:
                    val = sweep[d][comp][b]
                    if val is not None and d != 0.0:
                        ds.append(d)
                        ys.append(val - y0)
                if len(ds) < 2:
                    continue
                ds = np.array(ds)
                ys = np.array(ys)
                slope = float(ds @ ys / (ds @ ds))
                ss_res = float(((ys - slope * ds) ** 2).sum())
                ss_tot = float((ys ** 2).sum())
                fit_r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
                key = (param, comp, b)
                slopes[key] = slope
                r2[key] = fit_r2
                if fit_r2 < r2_threshold and abs(slope) > slope_floor:
                    flagged.append(key)
    return SensitivityTable(slopes=slopes, nominal=nominal, r2=r2,
                            flagged=flagged, half_width=half_width,
                            points=points)


def _clamped_min_norm(S, rhs, limit):
    """Minimum-norm solve of S u = rhs with per-component |u_i| <= limit.

    Components that exceed the limit are pinned there one at a time
    (most-saturated first), their contribution moved to the right-hand
    side, and the remaining channels re-solved, so authority that one
    channel cannot deliver is redistributed to the others instead of
    being lost. With a single free channel the residual demand is met in
    the least-squares sense.
    """
    n_cols = S.shape[1]
    u = np.zeros(n_cols)
    free = list(range(n_cols))
    residual = rhs.copy()
    while free:
        Sf = S[:, free]
        if len(free) >= 2:
            G = Sf @ Sf.T
            if np.linalg.cond(G) > 1e12:
                raise AllocationError("singular longitudinal map")
            uf = Sf.T @ np.linalg.solve(G, residual)
        else:
            s = Sf[:, 0]
            uf = np.array([s @ residual / (s @ s)])
        over = np.abs(uf) > limit
        if not over.any():
            for idx, val in zip(free, uf):
                u[idx] = val
            return u
        j = int(np.argmax(np.abs(uf)))
        i = free[j]
        u[i] = np.sign(uf[j]) * limit
        residual = residual - S[:, i] * u[i]
        free.remove(i)
    return u


def allocate(dfa, table: SensitivityTable, f_signs=None,
             abdomen_active: bool = True,
             branch_mode: str = "mean",
             delta_limit: float = None) -> ControlParams:
    """Map a demanded mean-force change to waveform offsets.

    Longitudinal plane: minimum-norm resolution of the underdetermined
    2x3 system over (phi_ms, theta_0, theta_Am); with the abdomen
    inactive, the square system over the first two offsets is inverted
    instead. Lateral direction: scalar inversion of the antisymmetric
    stroke-amplitude slope.

    With `delta_limit` set, offsets are kept within that magnitude by
    pinning saturated channels at the limit and re-solving the residual
    demand over the remaining ones (see `_clamped_min_norm`); the
    lateral offset is clipped directly. Extra channels then matter most
    exactly when the loop is saturated, which is what extends the
    recoverable region.

    `branch_mode` selects the slope rows. "mean" (default) uses the
    slopes of the ordinary full-period mean force, which is the quantity
    the PID demand is expressed in. "sign" matches each force row to the
    positive- or negative-subset slope according to the sign of the
    current averaged force component (`f_signs`, defaulting to the
    nominal orbit's means), with a fallback to the mean slope when that
    sign is ambiguous. Sign matching looks attractive because the subset
    means respond much more strongly than the full mean, but for exactly
    that reason it can misstate the achievable mean change severely: a
    parameter that shifts both lobes together (the abdomen amplitude,
    whose reaction force integrates to zero over any whole cycle) shows
    large opposite-signed subset slopes and an order-of-magnitude
    smaller mean slope, and allocating with the subset slope makes the
    loop lean on force that never materializes.
    """
    if branch_mode not in ("mean", "sign"):
        raise ValueError("branch_mode must be 'mean' or 'sign'")
    dfa = np.asarray(dfa, dtype=float)
    if branch_mode == "mean":
        branches = ["m", "m"]
    else:
        if f_signs is None:
            f_signs = [table.nominal.get((i, "m"), 0.0) for i in range(3)]
        branches = []
        for i in (0, 2):
            lobes = [abs(table.nominal[(i, b)]) for b in ("p", "n")
                     if (i, b) in table.nominal]
            if lobes and abs(f_signs[i]) < 0.1 * max(lobes):
                branches.append("m")
            else:
                branches.append("p" if f_signs[i] >= 0 else "n")
    S = table.longitudinal_matrix(branches)
    rhs = dfa[[0, 2]]
    S_active = S if abdomen_active else S[:, :2]
    try:
        if delta_limit is not None:
            ua = _clamped_min_norm(S_active, rhs, delta_limit)
        elif abdomen_active:
            G = S @ S.T
            if np.linalg.cond(G) > 1e12:
                raise AllocationError("singular longitudinal map")
            ua = S.T @ np.linalg.solve(G, rhs)
        else:
            if np.linalg.cond(S_active) > 1e12:
                raise AllocationError("singular longitudinal map")
            ua = np.linalg.solve(S_active, rhs)
    except np.linalg.LinAlgError as exc:
        raise AllocationError(str(exc)) from exc
    u = np.zeros(3)
    u[:ua.size] = ua
    lat = table.lateral_slope()
    if abs(lat) < 1e-15:
        raise AllocationError("zero lateral slope")
    u_lat = dfa[1] / lat
    if delta_limit is not None:
        u_lat = float(np.clip(u_lat, -delta_limit, delta_limit))
    return ControlParams(dphi_ms=float(u[0]), dphi_mk=float(u_lat),
                         dtheta_0=float(u[1]), dtheta_Am=float(u[2]))


def reference_grids(wp, bp, v0_orbit, morph: MorphologyConfig,
                    aero: AeroConfig, steps_per_period: int):
    """Nominal-orbit (position, velocity) on the half-step stage grid.

    Full steps come from a run at the loop's own resolution, so the
    tracking error at control-update times vanishes to roundoff for an
    unperturbed start instead of reflecting the integrator's own
    discretization error; half-step values are midpoint interpolants and
    only smooth the integral-error quadrature.
    """
    one = SimConfig(steps_per_period=steps_per_period, periods=1,
                    record_torques=False)
    traj = integrate(np.zeros(3), np.asarray(v0_orbit, dtype=float),
                     wp, wp, bp, morph, one, aero=aero)
    x_ref = np.empty((2 * steps_per_period + 1, 3))
    v_ref = np.empty_like(x_ref)
    for full, half in ((traj.x, x_ref), (traj.xdot, v_ref)):
        half[0::2] = full
        half[1::2] = 0.5 * (full[:-1] + full[1:])
    return x_ref, v_ref


class PIDOrbitController:
    """Sub-cycle waveform adjustment toward the hover orbit.

    Implements the callback protocol of simulate.integrate: `due` gates
    updates, `plan` returns adjusted parameter sets, and `reference`
    supplies the desired position for the integral-error dynamics. The
    tracking error is desired-minus-actual; its integral is clamped in
    norm before entering the PID law to limit windup during large
    excursions.

    `updates_per_cycle` sets how often the longitudinal offsets are
    recomputed (1 = once per wingbeat at stroke start). The lateral
    offset is always held for a full wingbeat: its instantaneous force
    sensitivity oscillates with alternating sign around a small mean, so
    modulating it inside the stroke couples the loop to the flapping
    harmonics and destabilizes the lateral plane, whereas the
    cycle-mean slope it is allocated with is only valid over whole
    strokes.

    `lateral_gain_scale` derates the demanded lateral force before
    allocation. The shared PID gains are a continuous-time design; with
    the lateral offset sampled once per wingbeat they sit beyond the
    discrete stability boundary (one-cycle-map root locus: unstable
    above roughly 1/4 of the design gain on the bundled morphology), so
    the lateral loop runs at a tenth of the design gain, which places
    its per-cycle multipliers near critical damping.
    """

    def __init__(self, wp: WingWaveformParams, bp: BodyAbdomenParams, v0,
                 gains: Gains, table: SensitivityTable,
                 morph: MorphologyConfig, aero: AeroConfig,
                 steps_per_period: int = 100, abdomen_active: bool = True,
                 updates_per_cycle: int = 10, windup_limit: float = 0.02,
                 delta_limit: float = 0.25, ref_grids=None,
                 record_history: bool = True,
                 lateral_gain_scale: float = 0.1):
        if updates_per_cycle < 1 or steps_per_period % updates_per_cycle:
            raise ValueError(
                "updates_per_cycle must be a positive divisor of "
                "steps_per_period")
        self.wp, self.bp = wp, bp
        self.v0 = np.asarray(v0, dtype=float)
        self.gains, self.table = gains, table
        self.morph, self.aero = morph, aero
        self.abdomen_active = abdomen_active
        self.updates_per_cycle = updates_per_cycle
        self.windup_limit = windup_limit
        self.delta_limit = delta_limit
        self.lateral_gain_scale = lateral_gain_scale
        self.record_history = record_history
        self.history = []
        self._current = ControlParams()
        self.period = wp.period
        self.steps_per_period = steps_per_period
        self._n_grid = 2 * steps_per_period
        self._dt_half = self.period / self._n_grid
        if ref_grids is None:
            self._x_ref, self._v_ref = reference_grids(
                wp, bp, self.v0, morph, aero, steps_per_period)
        else:
            self._x_ref, self._v_ref = ref_grids

    def reset(self):
        """Forget held offsets and history (fresh run, same tables)."""
        self._current = ControlParams()
        self.history = []

    def _ref_at(self, t):
        j = int(round(t / self._dt_half)) % self._n_grid
        return self._x_ref[j], self._v_ref[j]

    def reference(self, t):
        return self._ref_at(t)[0]

    def due(self, k, steps_per_period):
        return k % (steps_per_period // self.updates_per_cycle) == 0

    def _cycle_start(self, t):
        frac = (t / self.period) % 1.0
        return min(frac, 1.0 - frac) < 0.25 / self.steps_per_period

    def plan_offsets(self, t, x, xdot, ierr):
        """Saturation-scaled offset vector for the upcoming segment."""
        x_d, v_d = self._ref_at(t)
        e = x_d - x
        edot = v_d - xdot
        ie = np.asarray(ierr, dtype=float)
        n = np.linalg.norm(ie)
        if n > self.windup_limit:
            ie = ie * (self.windup_limit / n)
        dfa = pid_demand(e, edot, ie, self.gains, self.morph.m)
        dfa[1] *= self.lateral_gain_scale
        try:
            cp = allocate(dfa, self.table, abdomen_active=self.abdomen_active,
                          delta_limit=self.delta_limit)
            if not self._cycle_start(t):
                # the lateral and abdomen offsets act through cycle-mean
                # slopes whose instantaneous forces oscillate about them;
                # both are held for whole wingbeats so that sub-cycle
                # updates cannot couple the loop to the flapping harmonics
                cp = dataclasses.replace(cp, dphi_mk=self._current.dphi_mk,
                                         dtheta_Am=self._current.dtheta_Am)
        except AllocationError:
            cp = self._current  # freeze on failure
        self._current = cp
        if self.record_history:
            self.history.append({"t": t, "error": np.linalg.norm(e),
                                 "params": dataclasses.replace(cp)})
        return saturated_offsets(self.wp, cp, self.delta_limit)

    def plan(self, t, x, xdot, ierr):
        c = self.plan_offsets(t, x, xdot, ierr)
        wp_R = with_offsets(self.wp, d_phi_m=c[0] + c[1], d_theta_0=c[2])
        wp_L = with_offsets(self.wp, d_phi_m=c[0] - c[1], d_theta_0=c[2])
        bp2 = dataclasses.replace(self.bp,
                                  theta_A_m=self.bp.theta_A_m + c[3])
        return wp_R, wp_L, bp2


@dataclass
class ClosedLoopResult:
    trajectory: object
    history: list
    cycle_errors: np.ndarray
    converged: bool
    cycles_to_converge: int  # -1 when not converged


def closed_loop_run(x0, v0, wp, bp, v0_orbit, gains, table,
                    morph: MorphologyConfig, aero: AeroConfig,
                    periods: int = 100, steps_per_period: int = 100,
                    abdomen_active: bool = True, updates_per_cycle: int = 10,
                    tol: float = 1e-4, record_stride: int = None,
                    windup_limit: float = 0.02) -> ClosedLoopResult:
    """Closed-loop integration with per-cycle convergence bookkeeping.

    Convergence is declared at the first cycle boundary where both the
    position and velocity error norms drop below `tol`.
    """
    ctrl = PIDOrbitController(wp, bp, v0_orbit, gains, table, morph, aero,
                              steps_per_period=steps_per_period,
                              abdomen_active=abdomen_active,
                              updates_per_cycle=updates_per_cycle,
                              windup_limit=windup_limit)
    sim = SimConfig(steps_per_period=steps_per_period, periods=periods,
                    record_stride=record_stride or steps_per_period,
                    record_torques=False)
    traj = integrate(x0, v0, wp, wp, bp, morph, sim, aero=aero,
                     controller=ctrl)
    # errors at cycle boundaries: the orbit closes, so the reference
    # state there is (0, v0_orbit)
    T = wp.period
    boundary = np.isclose(np.mod(traj.t / T + 0.5, 1.0), 0.5, atol=1e-9)
    tb = traj.t[boundary]
    xb = traj.x[boundary]
    vb = traj.xdot[boundary]
    errs = np.maximum(np.linalg.norm(xb, axis=1),
                      np.linalg.norm(vb - np.asarray(v0_orbit), axis=1))
    hit = np.nonzero(errs < tol)[0]
    converged = hit.size > 0 and not traj.diverged
    cycles = int(round(tb[hit[0]] / T)) if converged else -1
    return ClosedLoopResult(trajectory=traj, history=ctrl.history,
                            cycle_errors=errs, converged=converged,
                            cycles_to_converge=cycles)


def advance_cycle(ctrl: PIDOrbitController, x, xdot, ierr,
                  morph: MorphologyConfig, aero: AeroConfig):
    """One closed-loop wingbeat using cached segment propagators.

    Equivalent to simulate.integrate with the same controller, but each
    control-update segment is advanced by a CyclePropagator window, so
    the per-cycle cost stays near the open-loop fast path.
    """
    spp = ctrl.steps_per_period
    seg = spp // ctrl.updates_per_cycle
    dt = ctrl.period / spp
    for s in range(ctrl.updates_per_cycle):
        wp_R, wp_L, bp2 = ctrl.plan(s * seg * dt, x, xdot, ierr)
        prop = CyclePropagator(wp_R, wp_L, bp2, morph, aero, spp,
                               x_ref=ctrl._x_ref, start_step=s * seg,
                               n_steps=seg)
        x, xdot, ierr = prop.run(x, xdot, ierr)
        if not np.all(np.isfinite(xdot)):
            break
    return x, xdot, ierr


def closed_loop_monodromy(wp, bp, v0_orbit, gains, table, morph, aero,
                          steps_per_period: int = 100,
                          updates_per_cycle: int = 10,
                          abdomen_active: bool = True,
                          h_rel: float = 1e-6, h_floor: float = 1e-4,
                          lateral_gain_scale: float = 0.1):
    """Numeric one-cycle linearization of the controlled dynamics.

    The closed loop is a sampled-data system (offsets held between
    updates), so its variational dynamics are obtained directly as the
    Jacobian of the cycle-advance map on the 9-state (x, xdot, I) via
    central differences about the orbit, rather than from a smooth
    right-hand side.
    """
    from .floquet import MonodromyResult
    ctrl = PIDOrbitController(wp, bp, v0_orbit, gains, table, morph, aero,
                              steps_per_period=steps_per_period,
                              abdomen_active=abdomen_active,
                              updates_per_cycle=updates_per_cycle,
                              record_history=False,
                              lateral_gain_scale=lateral_gain_scale)
    y0 = np.concatenate([np.zeros(3), np.asarray(v0_orbit, dtype=float),
                         np.zeros(3)])

    def cycle_map(y):
        ctrl.reset()
        x, xdot, ierr = advance_cycle(ctrl, y[:3].copy(), y[3:6].copy(),
                                      y[6:9].copy(), morph, aero)
        return np.concatenate([x, xdot, ierr])

    M = np.zeros((9, 9))
    for j in range(9):
        h = h_rel * max(abs(y0[j]), h_floor)
        e = np.zeros(9)
        e[j] = h
        M[:, j] = (cycle_map(y0 + e) - cycle_map(y0 - e)) / (2 * h)
    T = wp.period
    rho, V = np.linalg.eig(M)
    mu = np.log(rho.astype(complex)) / T
    return MonodromyResult(
        M=M, multipliers=rho, exponents=mu, eigenvectors=V, period=T,
        t_samples=np.array([0.0, T]),
        Psi_samples=np.stack([np.eye(9), M]),
        defective=bool(np.linalg.cond(V) > 1e12))


def _hat_batch(v):
    """Skew matrices for an (n, 3) array of vectors: (n, 3, 3)."""
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


class CyclePropagator:
    """One-wingbeat propagator with all motion-dependent terms cached.

    Every quantity that does not depend on the body state is evaluated
    once on the half-step stage grid: wing-frame velocity maps, the
    appendage coupling force, and the force rotation matrices. The
    remaining per-stage work is a handful of small array operations,
    which makes long Monte-Carlo closed-loop studies affordable. Results
    match simulate.integrate to floating-point roundoff.

    `start_step` and `n_steps` restrict the propagator to a contiguous
    window of the cycle's step grid, so a cycle can be advanced in
    segments whose waveform parameters differ (sub-cycle control
    updates). `x_ref` always spans the full cycle grid; window indices
    are mapped into it modulo the cycle.
    """

    def __init__(self, wp_R, wp_L, bp, morph: MorphologyConfig,
                 aero: AeroConfig, steps_per_period: int,
                 x_ref=None, start_step: int = 0, n_steps: int = None):
        self.morph = morph
        self.n = steps_per_period if n_steps is None else n_steps
        self.period = wp_R.period
        self.dt = self.period / steps_per_period
        self._j0 = 2 * start_step
        self._nref = 2 * steps_per_period
        n_grid = 2 * self.n + 1
        tg = ((self._j0 + np.arange(n_grid))
              * (self.period / (2 * steps_per_period)))
        m = prescribed_motion_at(tg, wp_R, wp_L, bp)
        r, wq, chord = aero.nodes()
        self.r, self.wq, self.chord = r, wq, chord
        self.rho_air = aero.rho_air
        P = np.diag([1.0, 0.0, 1.0])
        tabs = {"G": [], "a": [], "w": [], "RQ": []}
        for Q, Ow, mu, sign in ((m.Q_R, m.Omega_R, morph.mu_R, 1.0),
                                (m.Q_L, m.Omega_L, morph.mu_L, -1.0)):
            Qt = np.swapaxes(Q, -1, -2)
            Rt = np.swapaxes(m.R, -1, -2)
            G = P @ Qt @ Rt
            a = np.einsum("ij,...jk,...k->...i", P, Qt,
                          cross3(m.Omega, np.broadcast_to(mu, m.Omega.shape)))
            if aero.v_wind is not None and np.any(aero.v_wind):
                a = a - G @ aero.v_wind
            if aero.rotational_term == "wing_frame":
                omega_total = np.einsum("...ij,...j->...i", Qt, m.Omega) + Ow
            else:
                omega_total = np.einsum("...ij,...j->...i", Q, m.Omega) + Ow
            e2 = sign * np.array([0.0, 1.0, 0.0])
            tabs["G"].append(G)
            tabs["a"].append(a)
            tabs["w"].append(cross3(omega_total,
                                    np.broadcast_to(e2, omega_total.shape)))
            tabs["RQ"].append(m.R @ Q)
        # stage tables are stored grid-axis first so that table[j] yields
        # the per-wing slices for one stage with any batch axes behind;
        # chord-plane component 1 is identically zero after the span
        # projection, so the fused _accel keeps only components 0 and 2
        def _grid_first(pair, vec):
            # stack the wing axis just behind the vector/matrix axes,
            # then move the stage-grid axis to the front
            s = np.stack(np.broadcast_arrays(*pair), axis=-2 if vec else -3)
            return np.ascontiguousarray(
                np.moveaxis(s, -3 if vec else -4, 0))

        self._Gs = _grid_first(tabs["G"], vec=False)
        self._as = _grid_first(tabs["a"], vec=True)
        self._ws = _grid_first(tabs["w"], vec=True)
        self._RQs = _grid_first(tabs["RQ"], vec=False)
        self._hrc = 0.5 * aero.rho_air * chord * wq
        # state-independent coupling force on the stage grid, written as
        # c_i = m_i d/dt[R v_i] = m_i R(Omega x v_i + v_i'), where
        # v_i = -((mu_i + Q rho_i) x Omega + Q(rho_i x Omega_i)) is the
        # moment-arm velocity term; equivalent to the B/C matrix form of
        # the reduced dynamics but in pure vector algebra
        c = 0.0
        for key in ("R", "L", "A"):
            m_i, _, mu_i, rho_i = morph.component(key)
            Q = getattr(m, f"Q_{key}")
            O_i = getattr(m, f"Omega_{key}")
            Od_i = getattr(m, f"Omega_dot_{key}")
            rho_b = np.broadcast_to(rho_i, O_i.shape)
            p = np.einsum("...ij,j->...i", Q, rho_i)
            rxo = cross3(rho_b, O_i)
            v = -(cross3(mu_i + p, np.broadcast_to(m.Omega, p.shape))
                  + np.einsum("...ij,...j->...i", Q, rxo))
            pdot = np.einsum("...ij,...j->...i", Q, cross3(O_i, rho_b))
            vdot = -(cross3(pdot, np.broadcast_to(m.Omega, p.shape))
                     + cross3(mu_i + p,
                              np.broadcast_to(m.Omega_dot, p.shape))
                     + np.einsum("...ij,...j->...i", Q,
                                 cross3(O_i, rxo) + cross3(rho_b, Od_i)))
            c = c + m_i * np.einsum("...ij,...j->...i", m.R,
                                    cross3(np.broadcast_to(m.Omega, p.shape),
                                           v) + vdot)
        self._coupling = np.ascontiguousarray(np.moveaxis(c, -2, 0))
        self._grav = morph.g * np.array([0.0, 0.0, 1.0])
        self._x_ref = x_ref  # desired position on the stage grid

    def _accel(self, j, xdot):
        # fused blade-element evaluation for both wings; equivalent to
        # forces_from_velocity but without the spanwise-zero component,
        # the unused moment, or intermediate (wings, nodes, 3) stacks
        Gx = (np.einsum("...sij,...j->...si", self._Gs[j], xdot)
              + self._as[j])                              # (..., 2, 3)
        w = self._ws[j]
        u0 = Gx[..., 0, None] + self.r * w[..., 0, None]  # (..., 2, q)
        u2 = Gx[..., 2, None] + self.r * w[..., 2, None]
        normU = np.sqrt(u0 * u0 + u2 * u2)
        safe = np.maximum(normU, 1e-12)
        alpha = np.arccos(np.minimum(np.abs(u0) / safe, 1.0))
        c_l, c_d = lift_drag_coefficients(alpha)
        sgn = np.where(u0 * u2 < 0.0, -1.0, 1.0)
        # the normU factor already sends zero-speed nodes to zero force
        scale = self._hrc * normU
        kl = scale * c_l * sgn
        kd = scale * c_d
        F0 = (kl * u2 - kd * u0).sum(axis=-1)             # (..., 2)
        F2 = (-kl * u0 - kd * u2).sum(axis=-1)
        RQ = self._RQs[j]
        total = (np.einsum("...si,...s->...i", RQ[..., 0], F0)
                 + np.einsum("...si,...s->...i", RQ[..., 2], F2))
        return (total - self._coupling[j]) / self.morph.m + self._grav

    def _ref(self, j):
        return self._x_ref[(self._j0 + j) % self._nref]

    def run(self, x, xdot, ierr):
        """Advance the window with fixed-step RK4; returns final state."""
        dt = self.dt
        xr = self._x_ref
        for k in range(self.n):
            j = 2 * k
            a1 = self._accel(j, xdot)
            i1 = (self._ref(j) - x) if xr is not None else 0.0
            x2, v2 = x + 0.5 * dt * xdot, xdot + 0.5 * dt * a1
            a2 = self._accel(j + 1, v2)
            i2 = (self._ref(j + 1) - x2) if xr is not None else 0.0
            x3, v3 = x + 0.5 * dt * v2, xdot + 0.5 * dt * a2
            a3 = self._accel(j + 1, v3)
            i3 = (self._ref(j + 1) - x3) if xr is not None else 0.0
            x4, v4 = x + dt * v3, xdot + dt * a3
            a4 = self._accel(j + 2, v4)
            i4 = (self._ref(j + 2) - x4) if xr is not None else 0.0
            x = x + dt / 6 * (xdot + 2 * v2 + 2 * v3 + v4)
            xdot = xdot + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
            ierr = ierr + dt / 6 * (i1 + 2 * i2 + 2 * i3 + i4)
        return x, xdot, ierr


def roa_monte_carlo(n_samples, radius, wp, bp, v0_orbit, gains, table,
                    morph: MorphologyConfig, aero: AeroConfig,
                    rng_seed: int = 0, periods: int = 100,
                    steps_per_period: int = 100,
                    abdomen_active: bool = True,
                    updates_per_cycle: int = 10, tol: float = 1e-4,
                    windup_limit: float = 0.02,
                    delta_limit: float = 0.25):
    """Monte-Carlo map of which initial position errors converge back.

    Initial errors lie in the vertical plane: (e_x, e_z) = r(cos, sin)
    with r uniform in (0, radius) and the angle uniform in (0, 2*pi).
    Each sample runs the closed loop until the error norms drop below
    `tol` or the period budget runs out. Returns a record array with
    per-sample verdicts and the converged count.
    """
    rng = np.random.default_rng(rng_seed)
    rr = rng.uniform(0.0, radius, size=n_samples)
    th = rng.uniform(0.0, 2 * np.pi, size=n_samples)
    ex, ez = rr * np.cos(th), rr * np.sin(th)

    v0_orbit = np.asarray(v0_orbit, dtype=float)
    ref_grids = reference_grids(wp, bp, v0_orbit, morph, aero,
                                steps_per_period)
    # the samples advance in lockstep so that the prescribed-motion
    # tables and the RK4 stage math are evaluated once per segment for
    # the whole batch; each sample keeps its own controller state, and
    # the per-sample arithmetic is independent of the batch composition,
    # so verdicts match a one-at-a-time run exactly
    ctrls = [PIDOrbitController(wp, bp, v0_orbit, gains, table, morph,
                                aero, steps_per_period=steps_per_period,
                                abdomen_active=abdomen_active,
                                updates_per_cycle=updates_per_cycle,
                                windup_limit=windup_limit,
                                delta_limit=delta_limit,
                                ref_grids=ref_grids,
                                record_history=False)
             for _ in range(n_samples)]
    x = np.column_stack([ex, np.zeros(n_samples), ez])
    xdot = np.tile(v0_orbit, (n_samples, 1))
    ierr = np.zeros((n_samples, 3))
    converged = np.zeros(n_samples, dtype=bool)
    cycles = np.full(n_samples, -1, dtype=int)
    active = np.arange(n_samples)

    seg = steps_per_period // updates_per_cycle
    dt = wp.period / steps_per_period
    x_ref = ref_grids[0]
    for k in range(periods):
        if active.size == 0:
            break
        for s in range(updates_per_cycle):
            t = s * seg * dt
            offs = np.empty((active.size, 4))
            for row, i in enumerate(active):
                offs[row] = ctrls[i].plan_offsets(t, x[i], xdot[i], ierr[i])
            wp_R = with_offsets(wp, d_phi_m=(offs[:, 0] + offs[:, 1])[:, None],
                                d_theta_0=offs[:, 2][:, None])
            wp_L = with_offsets(wp, d_phi_m=(offs[:, 0] - offs[:, 1])[:, None],
                                d_theta_0=offs[:, 2][:, None])
            bp_b = dataclasses.replace(
                bp, theta_A_m=bp.theta_A_m + offs[:, 3][:, None])
            prop = CyclePropagator(wp_R, wp_L, bp_b, morph, aero,
                                   steps_per_period, x_ref=x_ref,
                                   start_step=s * seg, n_steps=seg)
            x[active], xdot[active], ierr[active] = prop.run(
                x[active], xdot[active], ierr[active])
        finite = (np.isfinite(x[active]).all(axis=1)
                  & np.isfinite(xdot[active]).all(axis=1))
        ok = (finite
              & (np.linalg.norm(x[active], axis=1) < tol)
              & (np.linalg.norm(xdot[active] - v0_orbit, axis=1) < tol))
        converged[active[ok]] = True
        cycles[active[ok]] = k + 1
        active = active[finite & ~ok]

    dtype = [("e_x", float), ("e_z", float), ("converged", bool),
             ("cycles", int)]
    out = np.array(list(zip(ex, ez, converged, cycles)), dtype=dtype)
    return out, int(out["converged"].sum())
