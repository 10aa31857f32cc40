"""End-to-end tests for the figure package.

A session fixture produces a small but real set of pipeline outputs by
invoking the simulation CLI in-process; every figure is then rendered
from those files alone.
"""

import hashlib
import json
import shutil
from pathlib import Path

import pytest

from flapsim.cli import main as flapsim_main
from flapsim_plots.cli import main as plots_main
from flapsim_plots.figures import render
from flapsim_plots.spec import (FigureError, FigureSpec, load_csv,
                                verify_manifest)

REPO = Path(__file__).resolve().parents[2]
CONFIGS = REPO / "configs"


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _run(*argv):
    rc = flapsim_main(list(argv))
    assert rc == 0, f"flapsim {argv} exited {rc}"


@pytest.fixture(scope="session")
def data(tmp_path_factory):
    """Small pipeline outputs: trajectories, a control run, two ROAs."""
    d = tmp_path_factory.mktemp("pipeline")
    orbit = str(CONFIGS / "hover_undulating.json")
    table = str(CONFIGS / "sensitivities_undulating.json")
    _run("simulate", "--config", orbit, "--periods", "1",
         "--record-stride", "2", "--out", str(d / "traj_u"))
    _run("simulate", "--config", str(CONFIGS / "hover_fixed.json"),
         "--periods", "1", "--record-stride", "2",
         "--out", str(d / "traj_f"))
    _run("control", "--orbit", orbit, "--table", table,
         "--error-z", "0.05", "--periods", "30",
         "--out", str(d / "control"))
    for mode in ("on", "off"):
        _run("roa", "--orbit", orbit, "--table", table,
             "--samples", "15", "--radius", "1.0", "--seed", "0",
             "--periods", "60", "--abdomen", mode,
             "--out", str(d / f"roa_{mode}.csv"))
    return d


def _spec(kind, data, out_dir, **roles):
    return FigureSpec(kind=kind, inputs=roles, output=out_dir / f"{kind}.png")


ALL_SPECS = {
    "hover": lambda d: {"trajectory": d / "traj_u.csv"},
    "energetics": lambda d: {"undulating": d / "traj_u.csv",
                             "fixed": d / "traj_f.csv"},
    "sensitivity": lambda d: {
        "table": CONFIGS / "sensitivities_undulating.json"},
    "convergence": lambda d: {"summary": d / "control.json",
                              "history": d / "control.csv"},
    "roa": lambda d: {"roa_on": d / "roa_on.csv",
                      "roa_off": d / "roa_off.csv"},
    "cycles": lambda d: {"roa_on": d / "roa_on.csv",
                         "roa_off": d / "roa_off.csv"},
}


class TestRendering:
    @pytest.mark.parametrize("kind", sorted(ALL_SPECS))
    def test_renders_png(self, kind, data, tmp_path):
        spec = _spec(kind, data, tmp_path, **ALL_SPECS[kind](data))
        facts = render(spec)
        assert spec.output.exists()
        assert spec.output.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        assert facts["panels"] >= 1

    def test_roa_figure_has_two_hulls(self, data, tmp_path):
        spec = _spec("roa", data, tmp_path, **ALL_SPECS["roa"](data))
        assert render(spec)["hulls"] == 2

    def test_rerender_is_byte_identical(self, data, tmp_path):
        spec = _spec("hover", data, tmp_path, **ALL_SPECS["hover"](data))
        render(spec)
        first = spec.output.read_bytes()
        render(spec)
        assert spec.output.read_bytes() == first

    def test_inputs_never_mutated(self, data, tmp_path):
        before = {p: _sha(p) for p in data.iterdir() if p.is_file()}
        for kind, roles in ALL_SPECS.items():
            render(_spec(kind, data, tmp_path, **roles(data)))
        assert {p: _sha(p) for p in data.iterdir()
                if p.is_file()} == before


class TestIntegrity:
    def test_tampered_input_refused_and_no_file_written(self, data,
                                                        tmp_path):
        for name in ("roa_on.csv", "roa_on.csv.manifest.json"):
            shutil.copy(data / name, tmp_path / name)
        shutil.copy(data / "roa_off.csv", tmp_path / "roa_off.csv")
        tampered = tmp_path / "roa_on.csv"
        tampered.write_text(tampered.read_text().replace("1", "2", 1))
        spec = _spec("roa", data, tmp_path,
                     roa_on=tampered, roa_off=tmp_path / "roa_off.csv")
        with pytest.raises(FigureError, match="modified"):
            render(spec)
        assert not spec.output.exists()

    def test_matching_manifest_accepted(self, data):
        assert verify_manifest(data / "roa_on.csv") is not None

    def test_absent_manifest_accepted(self, tmp_path):
        p = tmp_path / "table.json"
        p.write_text("{}")
        assert verify_manifest(p) is None

    def test_missing_input_named(self, data, tmp_path):
        spec = _spec("hover", data, tmp_path,
                     trajectory=tmp_path / "nope.csv")
        with pytest.raises(FigureError, match="nope.csv"):
            render(spec)
        assert not spec.output.exists()


class TestSchema:
    def test_empty_trajectory_errors_no_file(self, data, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        spec = _spec("hover", data, tmp_path, trajectory=empty)
        with pytest.raises(FigureError, match="empty"):
            render(spec)
        assert not spec.output.exists()

    def test_header_only_trajectory_errors(self, data, tmp_path):
        header = (data / "traj_u.csv").read_text().splitlines()[0]
        p = tmp_path / "headeronly.csv"
        p.write_text(header + "\n")
        spec = _spec("hover", data, tmp_path, trajectory=p)
        with pytest.raises(FigureError, match="no data rows"):
            render(spec)
        assert not spec.output.exists()

    def test_missing_column_is_named(self, data, tmp_path):
        lines = (data / "traj_u.csv").read_text().splitlines()
        lines[0] = lines[0].replace("v3", "w3")
        p = tmp_path / "renamed.csv"
        p.write_text("\n".join(lines) + "\n")
        spec = _spec("hover", data, tmp_path, trajectory=p)
        with pytest.raises(FigureError, match="'v3'"):
            render(spec)

    def test_unexpected_column_is_named(self, data, tmp_path):
        lines = (data / "roa_on.csv").read_text().splitlines()
        lines[0] += ",extra"
        rows = [lines[0]] + [row + ",0" for row in lines[1:]]
        p = tmp_path / "extra.csv"
        p.write_text("\n".join(rows) + "\n")
        with pytest.raises(FigureError, match="'extra'"):
            load_csv(p, ["e_x", "e_z", "converged", "cycles"], "ROA")

    def test_summary_missing_field_errors(self, data, tmp_path):
        summary = json.loads((data / "control.json").read_text())
        del summary["cycle_errors"]
        p = tmp_path / "control.json"
        p.write_text(json.dumps(summary))
        spec = _spec("convergence", data, tmp_path, summary=p,
                     history=data / "control.csv")
        with pytest.raises(FigureError, match="cycle_errors"):
            render(spec)


class TestCli:
    def test_success_exit_zero(self, data, tmp_path, capsys):
        out = tmp_path / "roa.png"
        rc = plots_main(["roa", "--roa-on", str(data / "roa_on.csv"),
                         "--roa-off", str(data / "roa_off.csv"),
                         "--output", str(out)])
        assert rc == 0
        assert out.exists()
        assert "hulls=2" in capsys.readouterr().out

    def test_bad_input_exit_nonzero(self, tmp_path, capsys):
        missing = tmp_path / "missing.csv"
        rc = plots_main(["hover", "--trajectory", str(missing),
                         "--output", str(tmp_path / "x.png")])
        assert rc == 1
        assert "missing.csv" in capsys.readouterr().err
        assert not (tmp_path / "x.png").exists()

    def test_schema_error_names_column(self, data, tmp_path, capsys):
        lines = (data / "traj_u.csv").read_text().splitlines()
        lines[0] = lines[0].replace("thetaB", "bodyB")
        p = tmp_path / "renamed.csv"
        p.write_text("\n".join(lines) + "\n")
        rc = plots_main(["hover", "--trajectory", str(p),
                         "--output", str(tmp_path / "x.png")])
        assert rc == 1
        assert "thetaB" in capsys.readouterr().err
