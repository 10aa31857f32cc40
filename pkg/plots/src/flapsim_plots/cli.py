"""Command-line entry point: `flapsim-plots <figure> ...`.

Each subcommand names the data files for one figure and the PNG to
write. Input files are never modified; any integrity or schema problem
aborts with a message and a non-zero exit before anything is written.
"""

import argparse
import sys
from pathlib import Path

from .figures import render
from .spec import FigureError, FigureSpec

FIGURES = {
    "hover": ["trajectory"],
    "energetics": ["undulating", "fixed"],
    "sensitivity": ["table"],
    "convergence": ["summary", "history"],
    "roa": ["roa_on", "roa_off"],
    "cycles": ["roa_on", "roa_off"],
}

HELP = {
    "hover": "orbit time histories from a trajectory CSV",
    "energetics": "energy/power comparison of two trajectory CSVs",
    "sensitivity": "force-response lines from a sensitivity table JSON",
    "convergence": "closed-loop error decay and commanded offsets",
    "roa": "convergence region scatter with per-mode hull boundaries",
    "cycles": "recovery-speed comparison on commonly converged samples",
}

ARG_HELP = {
    "trajectory": "trajectory CSV from `flapsim simulate`",
    "undulating": "trajectory CSV simulated with the undulating abdomen",
    "fixed": "trajectory CSV simulated with the abdomen fixed",
    "table": "sensitivity table JSON",
    "summary": "summary JSON from `flapsim control`",
    "history": "per-update CSV from `flapsim control`",
    "roa_on": "ROA CSV from `flapsim roa --abdomen on`",
    "roa_off": "ROA CSV from `flapsim roa --abdomen off`",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flapsim-plots",
        description="Render figures from flapsim CSV/JSON outputs.")
    sub = parser.add_subparsers(dest="figure", required=True)
    for kind, roles in FIGURES.items():
        p = sub.add_parser(kind, help=HELP[kind])
        for role in roles:
            p.add_argument(f"--{role.replace('_', '-')}", required=True,
                           help=ARG_HELP[role])
        p.add_argument("--output", required=True, help="PNG to write")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    roles = FIGURES[args.figure]
    spec = FigureSpec(
        kind=args.figure,
        inputs={role: getattr(args, role) for role in roles},
        output=Path(args.output),
    )
    try:
        facts = render(spec)
    except FigureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    detail = ", ".join(f"{k}={v}" for k, v in sorted(facts.items()))
    print(f"wrote {spec.output} ({detail})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
