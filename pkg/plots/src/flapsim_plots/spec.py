"""Input loading and integrity checks for figure rendering.

A FigureSpec names the data files a figure consumes and where the image
goes. Every file the simulation CLI writes travels with a
`<file>.manifest.json` sibling holding its SHA-256; loading here
verifies that hash so a figure can never be rendered from silently
edited data. Hand-maintained configuration files (e.g. a sensitivity
table shipped with the simulator) have no manifest, which is accepted;
a *mismatching* manifest is always fatal.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRAJECTORY_COLUMNS = (
    "t,x1,x2,x3,v1,v2,v3,FR1,FR2,FR3,FL1,FL2,FL3,E,Edot,"
    "tauR1,tauR2,tauR3,tauL1,tauL2,tauL3,tauA1,tauA2,tauA3,"
    "PR,PL,PA,Paero,thetaA,OmegaA2,thetaB,phiR,thetaR,psiR"
).split(",")
ROA_COLUMNS = ["e_x", "e_z", "converged", "cycles"]
CONTROL_COLUMNS = ["t", "error", "dphi_ms", "dphi_mk", "dtheta_0",
                   "dtheta_Am"]


class FigureError(Exception):
    """Bad or untrustworthy figure input."""


@dataclass
class FigureSpec:
    """What a figure reads and where it is written.

    `inputs` maps role names (e.g. "trajectory", "roa_on") to file
    paths; `layout` is (rows, cols); `labels` maps role/axis names to
    display strings with units.
    """

    kind: str
    inputs: dict
    output: Path
    layout: tuple = (1, 1)
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = {k: Path(v) for k, v in self.inputs.items()}
        self.output = Path(self.output)

    def verify(self):
        for role, path in self.inputs.items():
            if not path.exists():
                raise FigureError(f"input {role} not found: {path}")
            verify_manifest(path)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def verify_manifest(path):
    """Check `path` against its manifest sibling, if one exists."""
    path = Path(path)
    manifest_path = Path(f"{path}.manifest.json")
    if not manifest_path.exists():
        return None
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FigureError(f"unreadable manifest {manifest_path}: {exc}")
    recorded = None
    for name, digest in manifest.get("outputs", {}).items():
        if Path(name).name == path.name:
            recorded = digest
    if recorded is None:
        return manifest
    if recorded != _sha256(path):
        raise FigureError(
            f"{path} does not match the hash in {manifest_path}; "
            f"the data file was modified after it was produced")
    return manifest


def load_csv(path, expected_columns, what):
    """Columns of a headered CSV as a dict of float arrays."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FigureError(f"{what} file {path} is empty")
        if next(reader, None) is None:
            raise FigureError(f"{what} file {path} has no data rows")
    header = [h.strip() for h in header]
    for col in expected_columns:
        if col not in header:
            raise FigureError(
                f"{what} file {path} is missing column {col!r}")
    for col in header:
        if col not in expected_columns:
            raise FigureError(
                f"{what} file {path} has unexpected column {col!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise FigureError(
            f"{what} file {path}: {data.shape[1]} data columns for "
            f"{len(header)} header columns")
    return {col: data[:, i] for i, col in enumerate(header)}


def load_json(path, what):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FigureError(f"invalid {what} JSON {path}: {exc}")


def frequency_from_manifest(path):
    """Flapping frequency recorded in the data file's manifest."""
    manifest = verify_manifest(path)
    if manifest is None or "f" not in manifest:
        raise FigureError(
            f"no flapping frequency in the manifest of {path}; "
            f"downstroke shading needs the 'f' field")
    return float(manifest["f"])
