from __future__ import annotations

import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from hodgevortex import cli, greens
from hodgevortex.cli import bundled_configs, load_config, main, verify

SQUARE = {"a": [1.0, 0.0], "b": [0.0, 1.0]}
METRIC = {"coefficients": [[1, 0, 0.125, 0.0], [0, 1, 0.0, -0.125]], "truncation": 1}


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def read_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# bundled configs


def test_bundled_configs_listed():
    assert bundled_configs() == ["flat_geodesic.json", "two_mode_section.json"]


def test_flat_geodesic_config(tmp_path):
    assert main(["simulate", "--config", "flat_geodesic.json", "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "trajectory.csv")
    assert header == ["t", "x1", "y1", "eta_x", "eta_y", "H", "Hvort", "Hharm"]
    # straight line at the harmonic velocity (1, 0.5)
    assert np.max(np.abs(rows[:, 1] - (0.1 + rows[:, 0]))) < 1e-9
    assert np.max(np.abs(rows[:, 2] - (0.2 + 0.5 * rows[:, 0]))) < 1e-9
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["t_final"] == 2.0 and summary["halt_reason"] is None


def test_two_mode_section_config(tmp_path):
    assert main(["section", "--config", "two_mode_section.json", "--out", str(tmp_path), "--threads", "2"]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["energy"] == 0.12754
    assert len(manifest["orbits"]) == 4
    for entry in manifest["orbits"]:
        header, rows = read_csv(tmp_path / entry["file"])
        assert header == ["y", "eta_y"]
        assert len(rows) == entry["crossings"] > 0
        assert np.all((rows[:, 0] >= 0) & (rows[:, 0] < 1))
        assert np.all(np.abs(rows[:, 1]) <= manifest["eta_bound"])
        assert entry["max_energy_error"] < 1e-7


# determinism


def test_section_output_is_byte_identical(tmp_path):
    cfg = load_config("two_mode_section.json")
    cfg.update(angles=[0.0, 0.5], max_crossings=30)
    path = write_config(tmp_path, cfg)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["section", "--config", path, "--out", str(out_a), "--threads", "1"]) == 0
    assert main(["section", "--config", path, "--out", str(out_b), "--threads", "2"]) == 0
    for name in ("orbit_000.csv", "orbit_001.csv", "manifest.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_simulate_output_is_byte_identical(tmp_path):
    cfg = {
        "lattice": SQUARE,
        "conformal": METRIC,
        "vortices": [{"x": 0.2, "y": 0.1, "gamma": 1.0}, {"position": [0.6, 0.7], "strength": -0.5}],
        "eta": [0.3, 0.1],
        "t_end": 2.0,
    }
    path = write_config(tmp_path, cfg)
    for name in ("a", "b"):
        assert main(["simulate", "--config", path, "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()
    header, _ = read_csv(tmp_path / "a" / "trajectory.csv")
    assert header == ["t", "x1", "y1", "x2", "y2", "eta_x", "eta_y", "H", "Hvort", "Hharm"]


def test_no_temporary_files_left(tmp_path):
    assert main(["simulate", "--config", "flat_geodesic.json", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["summary.json", "trajectory.csv"]


# other experiments


def test_equilibria_command(tmp_path):
    path = write_config(tmp_path, {"lattice": SQUARE, "conformal": METRIC, "random_seeds": 5, "seed": 3})
    assert main(["equilibria", "--config", path, "--out", str(tmp_path)]) == 0
    result = json.loads((tmp_path / "equilibria.json").read_text())
    kinds = sorted(e["kind"] for e in result["equilibria"])
    assert kinds == ["max", "min", "saddle", "saddle"]
    for e in result["equilibria"]:
        assert e["rhs_norm"] < 1e-8
        assert e["hamiltonian"] == 0.5 * e["robin"]


@pytest.mark.parametrize("quantity,columns", [("green", ["x", "y", "G", "Gx", "Gy"]), ("robin", ["x", "y", "R", "Rx", "Ry"])])
def test_greens_table_command(tmp_path, quantity, columns):
    cfg = {"lattice": SQUARE, "conformal": METRIC, "quantity": quantity, "grid": 4, "source": [0.0, 0.0]}
    assert main(["greens-table", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "greens_table.csv")
    assert header == columns and rows.shape == (16, 5)


def test_annulus_command(tmp_path):
    cfg = {
        "r": 0.5,
        "R": 2.0,
        "p": 0.3,
        "vortices": [{"x": 1.0, "y": 0.0, "gamma": 1.0}, {"x": 1.2, "y": 0.2, "gamma": 1.0}],
        "t_end": 2.0,
    }
    assert main(["annulus", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary) >= {"P", "Q", "p_initial", "p_drift_max", "H_drift_max"}
    assert abs(summary["Q"] - math.log(4) / math.pi) < 1e-15
    assert summary["p_drift_max"] < 1e-6
    header, _ = read_csv(tmp_path / "trajectory.csv")
    assert header == ["t", "x1", "y1", "x2", "y2", "B", "H_red"]


# error paths


def test_missing_lattice_exits_2(tmp_path, capsys):
    cfg = {"conformal": METRIC, "vortices": [{"x": 0.1, "y": 0.1, "gamma": 1}], "t_end": 1.0}
    assert main(["simulate", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 2
    record = read_error(capsys)
    assert record["key"] == "lattice" and record["kind"] == "config"
    assert json.loads((tmp_path / "error.json").read_text()) == record


@pytest.mark.parametrize(
    "patch,key",
    [
        ({"rel_tol": 1e-16}, "rel_tol"),
        ({"t_end": -1.0}, "t_end"),
        ({"rhs": "sideways"}, "rhs"),
        ({"vortices": [{"x": 0.1}]}, "vortices[0]"),
        ({"experiment": "section"}, "experiment"),
        ({"r": 0.5}, "r"),
    ],
)
def test_config_errors_name_the_key(tmp_path, capsys, patch, key):
    cfg = load_config("flat_geodesic.json")
    cfg.update(patch)
    assert main(["simulate", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 2
    assert read_error(capsys)["key"] == key


def test_unreadable_and_invalid_configs(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert read_error(capsys)["key"] == "config"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--out", str(tmp_path)]) == 2


def test_numerical_error_exits_3(tmp_path, capsys):
    cfg = {"r": 0.5, "R": 2.0, "p": 0.0, "vortices": [{"x": 3.0, "y": 0.0, "gamma": 1.0}], "t_end": 1.0}
    assert main(["annulus", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path)]) == 3
    record = read_error(capsys)
    assert record["error"] == "OutsideDomain" and record["kind"] == "numerical"


def test_unwritable_output_is_reported(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", "flat_geodesic.json", "--out", str(blocker)]) == 2
    assert read_error(capsys)["kind"] == "io"


def test_bad_thread_count(tmp_path, capsys):
    assert main(["section", "--config", "two_mode_section.json", "--out", str(tmp_path), "--threads", "0"]) == 2
    assert read_error(capsys)["key"] == "threads"


# verify


def test_verify_passes():
    stream = io.StringIO()
    results = verify(stream)
    assert all(r.passed for r in results)
    lines = stream.getvalue().splitlines()
    assert len(lines) == len(results) + 1
    assert lines[-1] == f"{len(results)}/{len(results)} golden checks passed"
    assert main(["verify"]) == 0


def test_verify_catches_robin_sign_error(monkeypatch, capsys):
    original = greens.robin

    def flipped(rf, x, y):
        value, grad = original(rf, x, y)
        return -value, -grad

    monkeypatch.setattr(greens, "robin", flipped)
    results = {r.name: r for r in verify(io.StringIO())}
    assert not results["Robin value R(0, 1/4)"].passed
    assert main(["verify"]) == 1
    assert "FAIL  Robin value R(0, 1/4)" in capsys.readouterr().out


def test_console_script_module_entry(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "hodgevortex.cli", "simulate", "--config", "flat_geodesic.json", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "trajectory.csv").exists()


def test_experiment_table_matches_subcommands():
    assert set(cli.EXPERIMENTS) | {"verify"} == set(cli.SUBCOMMANDS)
