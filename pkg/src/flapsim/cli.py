"""Command-line surface: configuration loading, experiment drivers, and
machine-readable outputs.

Subcommands cover the full pipeline: `simulate` integrates a parameter
set and exports a trajectory CSV, `optimize` searches for a periodic
hover orbit, `floquet` reports the orbit's stability spectrum, `control`
runs the closed loop from a perturbed start, `roa` maps the region of
convergence by Monte Carlo, and `report` summarizes the manifests of
previous runs. Every output file is accompanied by a `*.manifest.json`
sibling recording the command, config hashes, seeds, tool version, and
wall time, so any artifact can be traced back to its inputs.

Exit codes: 0 success, 2 configuration error, 3 diverged simulation,
4 missing prerequisite artifact.

All file formats are documented in docs/formats.md. The environment
variable FLAPSIM_THREADS caps the BLAS thread pool (set before heavy
imports in `main`).
"""

import argparse
import dataclasses
import difflib
import hashlib
import json
import os
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_MISSING = 4

PACKAGE_DIR = Path(__file__).resolve().parent
BUNDLED_CONFIG_DIR = PACKAGE_DIR.parent.parent / "configs"

PARAM_KEYS = (
    "f", "beta", "phi_m", "phi_K", "phi_0", "theta_m", "theta_C",
    "theta_0", "theta_a", "psi_m", "psi_N", "psi_0", "psi_a",
    "theta_B_m", "theta_B_0", "theta_B_a", "theta_A_m", "theta_A_0",
    "theta_A_a", "v1", "v2", "v3",
)
# keys an orbit-solution file carries beyond the parameter vector
SOLUTION_EXTRA_KEYS = ("J", "residual_x", "residual_v", "feasible",
                       "seed_index", "steps_per_period",
                       "quadrature_points")
CONFIG_TOP_KEYS = ("abdomen_mode", "params", "sim", "aero",
                   ) + SOLUTION_EXTRA_KEYS
SIM_KEYS = ("steps_per_period", "periods", "record_stride",
            "record_torques")
AERO_KEYS = ("rho_air", "span", "wing_area", "quadrature_points",
             "v_wind", "rotational_term", "node_rule")
MORPH_KEYS = ("m_B", "m_A", "m_R", "m_L", "I_B", "I_A", "I_R", "I_L",
              "mu_R", "mu_L", "mu_A", "rho_R", "rho_L", "rho_A", "g")
PROBLEM_KEYS = ("abdomen_mode", "w1", "w2", "seed", "seed_count",
                "nm_maxiter", "lam_schedule", "residual_tol",
                "steps_per_period", "quadrature_points", "init")

DEFAULT_GAINS = (421.88, 15.60, 1.26)


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_json(path, what="config"):
    path = Path(path)
    if not path.exists():
        raise CliError(EXIT_CONFIG, f"{what} file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"invalid JSON in {path}: {exc}")


def require_artifact(path, what):
    path = Path(path)
    if not path.exists():
        raise CliError(EXIT_MISSING,
                       f"missing prerequisite {what}: {path}")
    return load_json(path, what)


def validate_keys(d, allowed, context):
    for key in d:
        if key not in allowed:
            hint = difflib.get_close_matches(key, allowed, n=1)
            suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise CliError(EXIT_CONFIG,
                           f"unknown key {key!r} in {context}{suffix}")


def check_overwrite(paths, force):
    if force:
        return
    for p in paths:
        if Path(p).exists():
            raise CliError(
                EXIT_CONFIG,
                f"refusing to overwrite existing output {p} "
                f"(pass --force to allow)")


def write_manifest(primary_output, command, config_hashes, seeds,
                   outputs, t0, extra=None):
    manifest = {
        "command": command,
        "version": _version(),
        "config_sha256": {str(k): v for k, v in config_hashes.items()},
        "rng_seeds": seeds,
        "wall_time_s": round(time.monotonic() - t0, 3),
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = Path(f"{primary_output}.manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _version():
    from flapsim import __version__
    return __version__


def params_from_config(cfg, context):
    """(wp, bp, v0, abdomen_mode) from a parameter config or solution."""
    import numpy as np
    from flapsim.kinematics import BodyAbdomenParams, WingWaveformParams

    validate_keys(cfg, CONFIG_TOP_KEYS, context)
    mode = cfg.get("abdomen_mode", "undulating")
    if mode not in ("undulating", "fixed"):
        raise CliError(EXIT_CONFIG,
                       f"abdomen_mode must be 'undulating' or 'fixed', "
                       f"got {mode!r}")
    params = cfg.get("params")
    if not isinstance(params, dict):
        raise CliError(EXIT_CONFIG, f"{context} needs a 'params' object")
    validate_keys(params, PARAM_KEYS, f"{context} params")
    optional = {"psi_N"}
    if mode == "fixed":
        optional |= {"theta_A_m", "theta_A_a"}
    missing = [k for k in PARAM_KEYS
               if k not in params and k not in optional]
    if missing:
        raise CliError(EXIT_CONFIG,
                       f"{context} params missing {', '.join(missing)}")
    try:
        wp = WingWaveformParams(
            f=params["f"], beta=params["beta"], phi_m=params["phi_m"],
            phi_K=params["phi_K"], phi_0=params["phi_0"],
            theta_m=params["theta_m"], theta_C=params["theta_C"],
            theta_0=params["theta_0"], theta_a=params["theta_a"],
            psi_m=params["psi_m"], psi_N=int(params.get("psi_N", 2)),
            psi_0=params["psi_0"], psi_a=params["psi_a"])
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid waveform in {context}: {exc}")
    bp = BodyAbdomenParams(
        theta_B_m=params["theta_B_m"], theta_B_0=params["theta_B_0"],
        theta_B_a=params["theta_B_a"],
        theta_A_m=params.get("theta_A_m", 0.0),
        theta_A_0=params["theta_A_0"],
        theta_A_a=params.get("theta_A_a", 0.0),
        abdomen_fixed=(mode == "fixed"))
    v0 = np.array([params["v1"], params["v2"], params["v3"]])
    return wp, bp, v0, mode


def morphology_from_file(path):
    from flapsim.multibody import MorphologyConfig
    if path is None:
        return MorphologyConfig(), {}
    cfg = load_json(path, "morphology")
    validate_keys(cfg, MORPH_KEYS, f"morphology {path}")
    try:
        return MorphologyConfig(**cfg), {Path(path): _sha256(path)}
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid morphology in {path}: {exc}")


def _sim_config(cfg, args):
    from flapsim.simulate import SimConfig
    section = dict(cfg.get("sim", {}))
    validate_keys(section, SIM_KEYS, "sim section")
    for flag, key in (("steps_per_period", "steps_per_period"),
                      ("periods", "periods"),
                      ("record_stride", "record_stride")):
        val = getattr(args, flag, None)
        if val is not None:
            section[key] = val
    try:
        return SimConfig(**section)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid sim settings: {exc}")


def _aero_config(cfg, args):
    from flapsim.aero import AeroConfig
    section = dict(cfg.get("aero", {}))
    validate_keys(section, AERO_KEYS, "aero section")
    qp = getattr(args, "quadrature_points", None)
    if qp is not None:
        section["quadrature_points"] = qp
    try:
        return AeroConfig(**section)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid aero settings: {exc}")


def _load_orbit(path):
    """Orbit solution file -> (wp, bp, v0, mode, hash dict)."""
    cfg = require_artifact(path, "orbit solution")
    wp, bp, v0, mode = params_from_config(cfg, f"orbit solution {path}")
    return wp, bp, v0, mode, {Path(path): _sha256(path)}


def _load_table(path):
    from flapsim.control import SensitivityTable
    require_artifact(path, "sensitivity table")
    return SensitivityTable.from_json(path), {Path(path): _sha256(path)}


def _load_gains(path):
    from flapsim.control import Gains
    if path is None:
        return Gains(*DEFAULT_GAINS), {}
    cfg = load_json(path, "gains")
    validate_keys(cfg, ("K_P", "K_D", "K_I"), f"gains {path}")
    try:
        return Gains(**cfg), {Path(path): _sha256(path)}
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid gains in {path}: {exc}")


def cmd_simulate(args):
    import numpy as np
    from flapsim.simulate import integrate

    t0 = time.monotonic()
    cfg = load_json(args.config)
    hashes = {Path(args.config): _sha256(args.config)}
    wp, bp, v0, mode = params_from_config(cfg, f"config {args.config}")
    morph, mh = morphology_from_file(args.morphology)
    hashes.update(mh)
    sim = _sim_config(cfg, args)
    aero = _aero_config(cfg, args)

    out_csv = Path(f"{args.out}.csv")
    out_json = Path(f"{args.out}.json")
    manifest = Path(f"{args.out}.csv.manifest.json")
    check_overwrite([out_csv, out_json, manifest], args.force)

    traj = integrate(np.zeros(3), v0, wp, wp, bp, morph, sim, aero=aero)
    if traj.diverged:
        raise CliError(EXIT_DIVERGED,
                       f"simulation diverged at t = {traj.t_last_valid:.6g} s")
    traj.to_csv(out_csv)
    summary = {
        "abdomen_mode": mode,
        "final_x": traj.x_final.tolist(),
        "final_xdot": traj.xdot_final.tolist(),
        "energy": {"mean": float(traj.E.mean()),
                   "min": float(traj.E.min()),
                   "max": float(traj.E.max())},
        "mean_aero_power": float(traj.P_aero.mean()),
        "mean_joint_power": {k: float(getattr(traj, f"P_{k}").mean())
                             for k in ("R", "L", "A")},
        "periods": sim.periods,
        "steps_per_period": sim.steps_per_period,
    }
    with open(out_json, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    write_manifest(out_csv, ["simulate"] + args.raw, hashes, {},
                   [out_csv, out_json], t0,
                   extra={"f": wp.f, "periods": sim.periods,
                          "steps_per_period": sim.steps_per_period,
                          "record_stride": sim.record_stride})
    print(f"wrote {out_csv} and {out_json}")
    return EXIT_OK


def cmd_optimize(args):
    from flapsim.orbit import OrbitProblem, OrbitSolution, solve

    t0 = time.monotonic()
    cfg = load_json(args.config)
    validate_keys(cfg, PROBLEM_KEYS, f"problem config {args.config}")
    hashes = {Path(args.config): _sha256(args.config)}

    from flapsim.aero import AeroConfig
    from flapsim.simulate import SimConfig
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    try:
        problem = OrbitProblem(
            abdomen_mode=cfg.get("abdomen_mode", "undulating"),
            w1=cfg.get("w1", 1.0), w2=cfg.get("w2", 1.0), seed=seed,
            sim=SimConfig(
                steps_per_period=cfg.get("steps_per_period", 200)),
            aero=AeroConfig(
                quadrature_points=cfg.get("quadrature_points", 16)))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid problem config: {exc}")

    x0 = None
    if "init" in cfg:
        init_path = Path(args.config).parent / cfg["init"]
        require_artifact(init_path, "initial solution")
        init = OrbitSolution.from_json(init_path)
        hashes[init_path] = _sha256(init_path)
        x0 = init.decision(problem)

    out = Path(args.out)
    check_overwrite([out, Path(f"{out}.manifest.json")], args.force)
    sol = solve(problem, seed_count=cfg.get("seed_count", 4), x0=x0,
                nm_maxiter=cfg.get("nm_maxiter", 100),
                lam_schedule=tuple(cfg.get("lam_schedule",
                                           (1e2, 1e4, 1e6))),
                residual_tol=cfg.get("residual_tol", 1e-5))
    sol.to_json(out)
    write_manifest(out, ["optimize"] + args.raw, hashes,
                   {"multistart": seed}, [out], t0)
    print(f"wrote {out} (J = {sol.J:.6g}, feasible = {sol.feasible})")
    return EXIT_OK


def cmd_floquet(args):
    import numpy as np
    from flapsim.floquet import make_openloop_system, mode_report, monodromy

    t0 = time.monotonic()
    wp, bp, v0, mode, hashes = _load_orbit(args.orbit)
    morph, mh = morphology_from_file(args.morphology)
    hashes.update(mh)
    from flapsim.aero import AeroConfig
    aero = AeroConfig(quadrature_points=args.quadrature_points or 16)
    spp = args.steps_per_period or 200

    out = Path(args.out)
    check_overwrite([out, Path(f"{out}.manifest.json")], args.force)
    sys_ = make_openloop_system(wp, wp, bp, v0, morph, aero,
                                steps_per_period=spp)
    res = monodromy(sys_, steps_per_period=spp)

    def c2d(z):
        return {"re": float(np.real(z)), "im": float(np.imag(z))}

    report = {
        "abdomen_mode": mode,
        "period": res.period,
        "monodromy": res.M.tolist(),
        "multipliers": [c2d(r) for r in res.multipliers],
        "exponents": [c2d(m) for m in res.exponents],
        "magnitudes": np.abs(res.multipliers).tolist(),
        "modes": [
            {**m, "multiplier": c2d(m["multiplier"]),
             "exponent": c2d(m["exponent"])}
            for m in mode_report(res)
        ],
    }
    with open(out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    write_manifest(out, ["floquet"] + args.raw, hashes, {}, [out], t0)
    n_unit = int(np.sum(np.isclose(np.abs(res.multipliers), 1.0,
                                   atol=1e-6)))
    print(f"wrote {out} ({n_unit} unit multipliers, "
          f"max |rho| = {np.abs(res.multipliers).max():.6f})")
    return EXIT_OK


def cmd_control(args):
    import numpy as np
    from flapsim.control import closed_loop_run

    t0 = time.monotonic()
    wp, bp, v0, mode, hashes = _load_orbit(args.orbit)
    morph, mh = morphology_from_file(args.morphology)
    hashes.update(mh)
    gains, gh = _load_gains(args.gains)
    hashes.update(gh)
    table, th = _load_table(args.table)
    hashes.update(th)
    from flapsim.aero import AeroConfig
    aero = AeroConfig(quadrature_points=args.quadrature_points or 8)
    abdomen = args.abdomen == "on"

    out_csv = Path(f"{args.out}.csv")
    out_json = Path(f"{args.out}.json")
    manifest = Path(f"{out_csv}.manifest.json")
    check_overwrite([out_csv, out_json, manifest], args.force)

    x0 = np.array([args.error_x, 0.0, args.error_z])
    res = closed_loop_run(
        x0, v0, wp, bp, v0, gains, table, morph, aero,
        periods=args.periods,
        steps_per_period=args.steps_per_period or 100,
        abdomen_active=abdomen,
        updates_per_cycle=args.updates_per_cycle, tol=args.tol)
    if res.trajectory.diverged:
        raise CliError(EXIT_DIVERGED, "closed-loop run diverged")

    rows = np.array([
        [h["t"], h["error"], h["params"].dphi_ms, h["params"].dphi_mk,
         h["params"].dtheta_0, h["params"].dtheta_Am]
        for h in res.history])
    np.savetxt(out_csv, rows, delimiter=",",
               header="t,error,dphi_ms,dphi_mk,dtheta_0,dtheta_Am",
               comments="")
    summary = {
        "abdomen_active": abdomen,
        "converged": res.converged,
        "cycles_to_converge": res.cycles_to_converge,
        "cycle_errors": res.cycle_errors.tolist(),
        "error_x": args.error_x, "error_z": args.error_z,
        "tolerance": args.tol,
        "gains": {"K_P": gains.K_P, "K_D": gains.K_D, "K_I": gains.K_I},
    }
    with open(out_json, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    write_manifest(out_csv, ["control"] + args.raw, hashes, {},
                   [out_csv, out_json], t0, extra={"f": wp.f})
    state = (f"converged in {res.cycles_to_converge} cycles"
             if res.converged else "did not converge")
    print(f"wrote {out_csv} and {out_json} ({state})")
    return EXIT_OK


def cmd_roa(args):
    import numpy as np
    from flapsim.control import roa_monte_carlo

    t0 = time.monotonic()
    wp, bp, v0, mode, hashes = _load_orbit(args.orbit)
    morph, mh = morphology_from_file(args.morphology)
    hashes.update(mh)
    gains, gh = _load_gains(args.gains)
    hashes.update(gh)
    table, th = _load_table(args.table)
    hashes.update(th)
    from flapsim.aero import AeroConfig
    aero = AeroConfig(quadrature_points=args.quadrature_points or 8)
    abdomen = args.abdomen == "on"

    out = Path(args.out)
    check_overwrite([out, Path(f"{out}.manifest.json")], args.force)
    records, n_conv = roa_monte_carlo(
        args.samples, args.radius, wp, bp, v0, gains, table, morph,
        aero, rng_seed=args.seed, periods=args.periods,
        steps_per_period=args.steps_per_period or 100,
        abdomen_active=abdomen,
        updates_per_cycle=args.updates_per_cycle, tol=args.tol)
    cols = np.column_stack([records["e_x"], records["e_z"],
                            records["converged"].astype(int),
                            records["cycles"]])
    np.savetxt(out, cols, delimiter=",",
               header="e_x,e_z,converged,cycles", comments="",
               fmt=("%.17g", "%.17g", "%d", "%d"))
    write_manifest(out, ["roa"] + args.raw, hashes, {"roa": args.seed},
                   [out], t0,
                   extra={"samples": args.samples, "radius": args.radius,
                          "abdomen": args.abdomen,
                          "converged_count": n_conv})
    print(f"wrote {out} ({n_conv}/{args.samples} converged, "
          f"abdomen {args.abdomen})")
    return EXIT_OK


def cmd_report(args):
    directory = Path(args.dir)
    if not directory.is_dir():
        raise CliError(EXIT_CONFIG, f"not a directory: {directory}")
    manifests = sorted(directory.glob("*.manifest.json"))
    if not manifests:
        raise CliError(EXIT_MISSING,
                       f"no run manifests found in {directory}")
    entries = []
    for path in manifests:
        m = load_json(path, "manifest")
        entries.append({
            "manifest": str(path),
            "command": m.get("command"),
            "version": m.get("version"),
            "wall_time_s": m.get("wall_time_s"),
            "outputs": m.get("outputs"),
        })
    text = json.dumps(entries, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        check_overwrite([out], args.force)
        out.write_text(text + "\n")
        print(f"wrote {out} ({len(entries)} runs)")
    else:
        print(text)
    return EXIT_OK


def _add_common_out(p):
    p.add_argument("--out", required=True,
                   help="output path or path prefix")
    p.add_argument("--force", action="store_true",
                   help="allow overwriting existing outputs")


def _add_fidelity(p, spp_default=None, qp_default=None):
    p.add_argument("--steps-per-period", type=int, default=spp_default)
    p.add_argument("--quadrature-points", type=int, default=qp_default)


def _add_loop_args(p):
    p.add_argument("--orbit", required=True,
                   help="orbit solution JSON (from optimize)")
    p.add_argument("--gains", default=None,
                   help="PID gains JSON; default is the bundled design")
    p.add_argument("--table", default=str(
        BUNDLED_CONFIG_DIR / "sensitivities_undulating.json"),
        help="sensitivity table JSON")
    p.add_argument("--morphology", default=None)
    p.add_argument("--abdomen", choices=("on", "off"), default="on",
                   help="use the abdomen channel in allocation")
    p.add_argument("--periods", type=int, default=100)
    p.add_argument("--updates-per-cycle", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-4)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flapsim",
        description="Flapping-wing UAV simulation and analysis toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate",
                       help="integrate a parameter set, export CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--morphology", default=None)
    p.add_argument("--periods", type=int, default=None)
    p.add_argument("--record-stride", type=int, default=None)
    _add_fidelity(p)
    _add_common_out(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="search for a periodic orbit")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's multistart seed")
    _add_common_out(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("floquet",
                       help="open-loop stability spectrum of an orbit")
    p.add_argument("--orbit", required=True)
    p.add_argument("--morphology", default=None)
    _add_fidelity(p)
    _add_common_out(p)
    p.set_defaults(func=cmd_floquet)

    p = sub.add_parser("control",
                       help="closed-loop run from a perturbed start")
    _add_loop_args(p)
    p.add_argument("--error-x", type=float, default=0.0,
                   help="initial position error, first axis (m)")
    p.add_argument("--error-z", type=float, default=0.1,
                   help="initial position error, third axis (m)")
    _add_fidelity(p)
    _add_common_out(p)
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("roa",
                       help="Monte-Carlo region-of-convergence map")
    _add_loop_args(p)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    _add_fidelity(p)
    _add_common_out(p)
    p.set_defaults(func=cmd_roa)

    p = sub.add_parser("report", help="summarize run manifests")
    p.add_argument("--dir", default=".")
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def _apply_thread_cap():
    cap = os.environ.get("FLAPSIM_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def main(argv=None):
    _apply_thread_cap()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.raw = argv[1:]
    try:
        return args.func(args)
    except CliError as exc:
        print(f"flapsim: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
