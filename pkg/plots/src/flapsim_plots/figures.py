"""The six figure builders.

Every builder takes a FigureSpec, reads only the documented CSV/JSON
formats, and writes a deterministic PNG (fixed font, figure size, and
DPI; the Agg backend). Builders return a small dict of facts about what
was drawn (panel count, hull count, ...) so tests can assert on content
without decoding pixels.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .spec import (CONTROL_COLUMNS, ROA_COLUMNS, TRAJECTORY_COLUMNS,
                   FigureError, FigureSpec, frequency_from_manifest,
                   load_csv, load_json)

RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
}

DOWNSTROKE_ALPHA = 0.15


def _shade_downstrokes(ax, t_max, f):
    """Shade the second half of each wingbeat (the downstroke)."""
    T = 1.0 / f
    k = 0
    while k * T + T / 2 < t_max:
        ax.axvspan(k * T + T / 2, min((k + 1) * T, t_max),
                   color="0.5", alpha=DOWNSTROKE_ALPHA, linewidth=0)
        k += 1


def _finish(fig, spec: FigureSpec):
    fig.tight_layout()
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output)
    plt.close(fig)


def fig_hover(spec: FigureSpec):
    """Hover orbit: position, velocity, wing angles, body/abdomen pitch."""
    data = load_csv(spec.inputs["trajectory"], TRAJECTORY_COLUMNS,
                    "trajectory")
    f = frequency_from_manifest(spec.inputs["trajectory"])
    t = data["t"]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2, 2, figsize=(8, 5.5))
        panels = [
            (axes[0, 0], [("x1", "$x_1$"), ("x2", "$x_2$"),
                          ("x3", "$x_3$")], "position (m)"),
            (axes[0, 1], [("v1", "$\\dot x_1$"), ("v2", "$\\dot x_2$"),
                          ("v3", "$\\dot x_3$")], "velocity (m/s)"),
            (axes[1, 0], [("phiR", "$\\phi$"), ("thetaR", "$\\theta$"),
                          ("psiR", "$\\psi$")], "wing angles (rad)"),
            (axes[1, 1], [("thetaB", "$\\theta_B$"),
                          ("thetaA", "$\\theta_A$")],
             "body/abdomen pitch (rad)"),
        ]
        for ax, series, ylabel in panels:
            for col, label in series:
                ax.plot(t, data[col], label=label)
            _shade_downstrokes(ax, t[-1], f)
            ax.set_xlabel("t (s)")
            ax.set_ylabel(ylabel)
            ax.legend(loc="upper right", fontsize=7)
        fig.suptitle("Hovering periodic orbit", fontsize=10)
        _finish(fig, spec)
    return {"panels": 4, "samples": t.size}


def fig_energetics(spec: FigureSpec):
    """Energy, joint power, and abdomen torque: undulating vs fixed."""
    runs = {}
    for role in ("undulating", "fixed"):
        runs[role] = load_csv(spec.inputs[role], TRAJECTORY_COLUMNS,
                              f"{role} trajectory")
    f = frequency_from_manifest(spec.inputs["undulating"])
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 3, figsize=(9.5, 3.2))
        styles = {"undulating": "-", "fixed": "--"}
        for role, d in runs.items():
            t = d["t"]
            axes[0].plot(t, d["E"] * 1e3, styles[role], label=role)
            total_p = (d["PR"] + d["PL"] + d["PA"]) * 1e3
            axes[1].plot(t, total_p, styles[role], label=role)
            axes[2].plot(t, d["tauA2"] * 1e6, styles[role], label=role)
        for ax, ylabel in zip(axes, ("energy (mJ)", "joint power (mW)",
                                     "abdomen torque ($\\mu$N m)")):
            _shade_downstrokes(ax, runs["undulating"]["t"][-1], f)
            ax.set_xlabel("t (s)")
            ax.set_ylabel(ylabel)
            ax.legend(fontsize=7)
        fig.suptitle("Energetics with and without abdomen undulation",
                     fontsize=10)
        _finish(fig, spec)
    return {"panels": 3, "runs": len(runs)}


_PARAM_LABELS = {
    "phi_ms": "$\\Delta\\phi_{m_s}$",
    "phi_mk": "$\\Delta\\phi_{m_k}$",
    "theta_0": "$\\Delta\\theta_0$",
    "theta_Am": "$\\Delta\\theta_{A_m}$",
}
_BRANCH_LABELS = {"p": "positive lobe", "n": "negative lobe",
                  "m": "cycle mean"}


def fig_sensitivity(spec: FigureSpec):
    """Mean-force response lines per control parameter."""
    table = load_json(spec.inputs["table"], "sensitivity table")
    for key in ("slopes", "half_width"):
        if key not in table:
            raise FigureError(
                f"sensitivity table missing field {key!r}")
    hw = float(table["half_width"])
    grid = np.linspace(-hw, hw, 41)
    slopes = {}
    for flat, slope in table["slopes"].items():
        param, comp, branch = flat.split("|")
        slopes.setdefault(param, []).append((int(comp), branch,
                                             float(slope)))
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2, 2, figsize=(8, 5.5))
        lines = 0
        for ax, param in zip(axes.flat,
                             ("phi_ms", "theta_0", "theta_Am", "phi_mk")):
            for comp, branch, slope in sorted(slopes.get(param, [])):
                ax.plot(grid, slope * grid * 1e3,
                        label=f"$\\bar f_{{{comp + 1}}}$ "
                              f"({_BRANCH_LABELS[branch]})")
                lines += 1
            ax.set_xlabel(f"{_PARAM_LABELS[param]} (rad)")
            ax.set_ylabel("$\\Delta\\bar f$ (mN)")
            ax.legend(fontsize=6)
        fig.suptitle("Cycle-averaged force sensitivities", fontsize=10)
        _finish(fig, spec)
    return {"panels": 4, "lines": lines}


def fig_convergence(spec: FigureSpec):
    """Closed-loop error decay and the commanded waveform offsets."""
    summary = load_json(spec.inputs["summary"], "control summary")
    for key in ("cycle_errors", "tolerance"):
        if key not in summary:
            raise FigureError(f"control summary missing field {key!r}")
    history = load_csv(spec.inputs["history"], CONTROL_COLUMNS,
                       "control history")
    f = frequency_from_manifest(spec.inputs["history"])
    errors = np.asarray(summary["cycle_errors"], dtype=float)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(8.5, 3.4))
        floor = summary["tolerance"] * 1e-3
        axes[0].semilogy(np.arange(errors.size),
                         np.maximum(errors, floor), marker=".")
        axes[0].axhline(summary["tolerance"], color="k", linestyle=":",
                        label="tolerance")
        axes[0].set_xlabel("wingbeat")
        axes[0].set_ylabel("error norm (m)")
        axes[0].legend(fontsize=7)
        t = history["t"]
        for col in ("dphi_ms", "dphi_mk", "dtheta_0", "dtheta_Am"):
            axes[1].step(t, history[col], where="post",
                         label=_PARAM_LABELS[col[1:]])
        _shade_downstrokes(axes[1], t[-1], f)
        axes[1].set_xlabel("t (s)")
        axes[1].set_ylabel("offset (rad)")
        axes[1].legend(fontsize=7)
        fig.suptitle("Closed-loop convergence to the hover orbit",
                     fontsize=10)
        _finish(fig, spec)
    return {"panels": 2, "cycles": int(errors.size)}


def _hull_curve(points):
    from scipy.spatial import ConvexHull
    if points.shape[0] < 3:
        raise FigureError(
            "fewer than 3 converged samples; cannot draw a region "
            "boundary")
    hull = ConvexHull(points)
    idx = np.append(hull.vertices, hull.vertices[0])
    return points[idx]


def fig_roa(spec: FigureSpec):
    """Converged/diverged scatter with one hull boundary per mode."""
    hulls = 0
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.2, 5.0))
        for role, color, label in (("roa_on", "C0", "with abdomen"),
                                   ("roa_off", "C3", "without abdomen")):
            d = load_csv(spec.inputs[role], ROA_COLUMNS, "ROA")
            conv = d["converged"] > 0.5
            pts = np.column_stack([d["e_x"], d["e_z"]])
            if role == "roa_on":
                ax.plot(*pts[conv].T, ".", color="0.4", markersize=3,
                        label="converged sample")
                ax.plot(*pts[~conv].T, "x", color="0.7", markersize=4,
                        label="diverged sample")
            curve = _hull_curve(pts[conv])
            ax.plot(curve[:, 0], curve[:, 1], "-", color=color,
                    linewidth=1.8, label=f"boundary, {label}")
            hulls += 1
        ax.set_xlabel("$e_x$ (m)")
        ax.set_ylabel("$e_z$ (m)")
        ax.set_aspect("equal")
        ax.legend(fontsize=7, loc="upper right")
        fig.suptitle("Region of convergence", fontsize=10)
        _finish(fig, spec)
    return {"panels": 1, "hulls": hulls}


def fig_cycles(spec: FigureSpec):
    """Cycles-to-converge with vs without abdomen control."""
    runs = {role: load_csv(spec.inputs[role], ROA_COLUMNS, "ROA")
            for role in ("roa_on", "roa_off")}
    both = ((runs["roa_on"]["converged"] > 0.5)
            & (runs["roa_off"]["converged"] > 0.5))
    if not both.any():
        raise FigureError("no commonly converged samples to compare")
    on = runs["roa_on"]["cycles"][both]
    off = runs["roa_off"]["cycles"][both]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(8.5, 3.6))
        lo, hi = int(min(on.min(), off.min())), int(max(on.max(),
                                                        off.max()))
        bins = np.arange(lo, hi + 2) - 0.5
        axes[0].hist(on, bins=bins, alpha=0.6, label="with abdomen")
        axes[0].hist(off, bins=bins, alpha=0.6, label="without abdomen")
        axes[0].axvline(np.median(on), color="C0", linestyle="--")
        axes[0].axvline(np.median(off), color="C1", linestyle="--")
        axes[0].set_xlabel("cycles to converge")
        axes[0].set_ylabel("samples")
        axes[0].legend(fontsize=7)
        axes[1].plot(off, on, ".", markersize=4)
        span = [lo - 1, hi + 1]
        axes[1].plot(span, span, "k:", linewidth=1)
        axes[1].set_xlabel("cycles without abdomen")
        axes[1].set_ylabel("cycles with abdomen")
        fig.suptitle("Recovery speed with and without abdomen control",
                     fontsize=10)
        _finish(fig, spec)
    return {"panels": 2, "common_samples": int(both.sum()),
            "median_with": float(np.median(on)),
            "median_without": float(np.median(off))}


BUILDERS = {
    "hover": fig_hover,
    "energetics": fig_energetics,
    "sensitivity": fig_sensitivity,
    "convergence": fig_convergence,
    "roa": fig_roa,
    "cycles": fig_cycles,
}


def render(spec: FigureSpec):
    """Validate inputs and draw the figure named by spec.kind."""
    if spec.kind not in BUILDERS:
        raise FigureError(f"unknown figure kind {spec.kind!r}")
    spec.verify()
    return BUILDERS[spec.kind](spec)
