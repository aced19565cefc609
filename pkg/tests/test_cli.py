"""End-to-end checks of the batch front-end.

Covers flag/config-file/mode-default resolution, the grid grammar, the files
each mode writes, exit codes (0 ok, 1 usage, 2 total failure, 3 partial), and
the byte-for-byte rerun guarantee.
"""

import csv
import json
import math
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from fermion_monitor import cli
from fermion_monitor.cli import (
    ENSEMBLE_HEADER,
    UsageError,
    config_hash,
    main,
    parse_config,
    parse_grid,
)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------------------
# configuration resolution


def test_defaults_for_run_mode():
    cfg = parse_config([])
    assert cfg.mode == "run"
    assert cfg.sizes == [32]
    assert cfg.n_traj == 200
    assert cfg.grid is None
    assert cfg.out == Path("fm-out") / "run"
    assert cfg.params.L == 32
    assert cfg.params.w == 0.0
    assert cfg.params.gamma == 1.0
    assert cfg.params.alpha == 1.0
    assert cfg.params.dt == 0.05
    assert cfg.params.seed == 0
    assert cfg.params.boundary == "open"
    assert cfg.burn_in is None and cfg.n_steps is None
    assert cfg.cadence == 1.0


@pytest.mark.parametrize(
    "mode, sizes, ntraj, grid_text",
    [
        ("sweep", [16, 32], 200, "alpha=0.6:1.4:9"),
        ("collapse", [16, 24, 32], 200, "alpha=0.7:1.3:13"),
        ("phase-diagram", [16], 100, "bary:10"),
        ("nh-phase", [32], 2, "bary:50"),
    ],
)
def test_per_mode_defaults(mode, sizes, ntraj, grid_text):
    cfg = parse_config(["--mode", mode])
    assert cfg.sizes == sizes
    assert cfg.n_traj == ntraj
    assert cfg.grid.text == grid_text
    assert cfg.out == Path("fm-out") / mode


def test_oracle_check_defaults():
    cfg = parse_config(["--mode", "oracle-check"])
    assert cfg.sizes == [6]
    assert cfg.params.w == 1.0 and cfg.params.gamma == 1.0
    assert cfg.n_steps == 500


def test_flag_beats_config_file_beats_mode_default(tmp_path):
    f = tmp_path / "cfg.txt"
    f.write_text(
        "# sampling setup\n"
        "gamma = 0.7\n"
        "ntraj = 50\n"
        "burn_in = 3.5\n"
        "\n"
        "rc-gamma = -1.5   # dashed keys are normalized\n"
    )
    cfg = parse_config(["--config", str(f), "--gamma", "0.9"])
    assert cfg.mode == "run"
    assert cfg.params.gamma == 0.9  # flag wins
    assert cfg.n_traj == 50  # file beats mode default
    assert cfg.burn_in == 3.5  # file-only key
    assert cfg.params.rc_gamma == -1.5
    assert cfg.params.alpha == 1.0  # untouched mode default


def test_mode_can_come_from_config_file(tmp_path):
    f = tmp_path / "cfg.txt"
    f.write_text("mode = oracle-check\nn_steps = 12\n")
    cfg = parse_config(["--config", str(f)])
    assert cfg.mode == "oracle-check"
    assert cfg.sizes == [6]  # that mode's defaults apply
    assert cfg.n_steps == 12


def test_comma_list_of_sizes():
    cfg = parse_config(["--mode", "sweep", "--L", "12, 20"])
    assert cfg.sizes == [12, 20]
    assert cfg.params.L == 12


# ---------------------------------------------------------------------------
# grid grammar


def test_parse_grid_axis_linspace():
    spec = parse_grid("alpha=0.6:1.4:9")
    assert spec.kind == "axis" and spec.axis == "alpha"
    assert np.allclose(spec.values, np.linspace(0.6, 1.4, 9))


def test_parse_grid_normalizes_dashed_axis():
    spec = parse_grid("rc-gamma=-2:1:4")
    assert spec.axis == "rc_gamma"
    assert np.allclose(spec.values, np.linspace(-2, 1, 4))


def test_parse_grid_single_point():
    spec = parse_grid("gamma=0.9:0.9:1")
    assert spec.values == (0.9,)


def test_parse_grid_barycentric():
    spec = parse_grid("bary:25")
    assert spec.kind == "bary" and spec.n == 25 and spec.axis is None


@pytest.mark.parametrize(
    "text",
    [
        "nonsense",
        "beta=0:1:5",  # unknown axis
        "alpha=0:1",  # missing count
        "alpha=a:b:3",
        "alpha=0:1:0",
        "bary:1",
        "bary:x",
    ],
)
def test_bad_grids_raise(text):
    with pytest.raises(UsageError):
        parse_grid(text)


# ---------------------------------------------------------------------------
# usage errors -> exit 1


@pytest.mark.parametrize(
    "argv",
    [
        ["--ntraj", "0"],
        ["--gamma=-1"],
        ["--L", "0"],
        ["--L", "nope"],
        ["--L", ""],
        ["--mode", "sweep", "--grid", "beta=0:1:3"],
    ],
)
def test_bad_values_raise_usage_error(argv):
    with pytest.raises(UsageError):
        parse_config(argv)


def test_unknown_mode_exits_1(capsys):
    assert main(["--mode", "frobnicate"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_config_key_exits_1(tmp_path, capsys):
    f = tmp_path / "cfg.txt"
    f.write_text("gamm = 1.0\n")
    assert main(["--config", str(f)]) == 1
    err = capsys.readouterr().err
    assert "usage error" in err and "gamm" in err


def test_missing_config_file_exits_1(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "absent.txt")]) == 1
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["--mode", "sweep", "--grid", "bary:4"],
        ["--mode", "phase-diagram", "--grid", "alpha=0:1:3"],
        ["--mode", "collapse", "--L", "16,24", "--grid", "alpha=0.8:1.2:5"],
        ["--mode", "nh-phase", "--L", "10", "--grid", "bary:3"],
    ],
)
def test_mode_grid_mismatch_exits_1(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path / "out")]) == 1
    assert "usage error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# oracle-check mode


def test_oracle_check_mode(tmp_path, capsys):
    f = tmp_path / "cfg.txt"
    f.write_text("mode = oracle-check\nn_steps = 40\n")
    out = tmp_path / "out"
    assert main(["--config", str(f), "--out", str(out)]) == 0
    assert "-> PASS" in capsys.readouterr().out

    report = json.loads((out / "report.json").read_text())
    assert report["passed"] is True
    assert report["steps"] == 40
    assert report["max_dev_C"] <= 1e-6 and report["max_dev_F"] <= 1e-6

    rows = read_rows(out / "results.csv")
    assert rows[0] == ["step", "t", "dev_C", "dev_F"]
    assert len(rows) == 41
    assert float(rows[1][1]) == pytest.approx(0.05)

    log = read_rows(out / "readouts.csv")
    assert log[0] == ["t", "channel", "site", "x", "accepted"]
    assert len(log) > 40
    assert (out / "oracle-check.svg").stat().st_size > 0


# ---------------------------------------------------------------------------
# run mode: outputs and byte-level reproducibility


RUN_ARGS = [
    "--mode", "run", "--L", "8", "--boundary", "periodic",
    "--tmax", "40", "--ntraj", "4", "--seed", "3",
]


def test_run_mode_outputs_and_rerun_identical(tmp_path):
    out = tmp_path / "out"
    argv = RUN_ARGS + ["--out", str(out)]
    assert main(argv) == 0

    rows = read_rows(out / "results.csv")
    assert rows[0] == list(ENSEMBLE_HEADER)
    assert len(rows) == 7  # six observables
    assert all(r[-1] == "ok" and r[-2] == "4" for r in rows[1:])

    series = read_rows(out / "series.csv")
    assert series[0][0] == "t"
    assert len(series) > 2
    assert (out / "run.svg").stat().st_size > 0

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["mode"] == "run" and manifest["seed"] == 3
    assert manifest["config_hash"] == config_hash(manifest["config"])
    assert len(manifest["config_hash"]) == 40

    first = {
        name: (out / name).read_bytes()
        for name in ("results.csv", "series.csv", "run.svg", "manifest.json")
    }
    assert main(argv) == 0
    for name, blob in first.items():
        assert (out / name).read_bytes() == blob, f"{name} changed on rerun"


# ---------------------------------------------------------------------------
# sweep mode: partial and total grid failure


SWEEP_ARGS = [
    "--mode", "sweep", "--L", "12", "--ntraj", "4", "--seed", "1",
    "--grid", "gamma=0.05:2:3",
]


def test_sweep_partial_failure_exits_3(tmp_path):
    out = tmp_path / "out"
    # the gamma=0.05 point needs a relaxation window longer than tmax, so it
    # fails while the other two grid points succeed
    assert main(SWEEP_ARGS + ["--tmax", "60", "--out", str(out)]) == 3

    rows = read_rows(out / "results.csv")
    status = [r[-1] for r in rows[1:]]
    assert status.count("InvalidInputError") == 1
    assert status.count("ok") == 12  # six observables x two good points
    assert (out / "sweep.svg").stat().st_size > 0
    # a single size gives no crossing pairs, but the file is still written
    assert json.loads((out / "crossings.json").read_text()) == []


def test_sweep_total_failure_exits_2(tmp_path):
    out = tmp_path / "out"
    assert main(SWEEP_ARGS + ["--tmax", "5", "--out", str(out)]) == 2
    rows = read_rows(out / "results.csv")
    assert len(rows) == 4
    assert all(r[-1] == "InvalidInputError" for r in rows[1:])
    assert not (out / "sweep.svg").exists()
    assert not (out / "crossings.json").exists()


# ---------------------------------------------------------------------------
# analytic phase map


def test_nh_phase_mode(tmp_path):
    out = tmp_path / "out"
    assert main(["--mode", "nh-phase", "--grid", "bary:3", "--L", "8",
                 "--out", str(out)]) == 0

    rows = read_rows(out / "results.csv")
    assert rows[0] == ["w", "gamma", "alpha", "nu1", "nu2", "gapless",
                       "S_half", "S_top"]
    assert len(rows) == 7  # triangular grid with 3 points per edge
    by_corner = {
        (float(r[0]), float(r[1]), float(r[2])): r for r in rows[1:]
    }

    bond_only = by_corner[(0.0, 0.0, 1.0)]
    assert bond_only[5] == "0"
    assert (int(bond_only[3]), int(bond_only[4])) == (1, 1)
    assert float(bond_only[7]) == pytest.approx(math.log(2), abs=1e-9)

    density_only = by_corner[(0.0, 1.0, 0.0)]
    assert density_only[5] == "0"
    assert float(density_only[7]) == pytest.approx(0.0, abs=1e-9)

    hopping_only = by_corner[(1.0, 0.0, 0.0)]
    assert hopping_only[5] == "1"
    assert hopping_only[3] == "" and hopping_only[7] == ""  # no windings

    assert (out / "nh-phase.svg").stat().st_size > 0


# ---------------------------------------------------------------------------
# phase-diagram mode over the simplex corners


def test_phase_diagram_mode(tmp_path):
    out = tmp_path / "out"
    assert main(["--mode", "phase-diagram", "--grid", "bary:2", "--L", "16",
                 "--ntraj", "3", "--tmax", "80", "--seed", "5",
                 "--out", str(out)]) == 0
    rows = read_rows(out / "results.csv")
    assert len(rows) == 1 + 3 * 6  # three corner points, six observables
    assert all(r[-1] == "ok" for r in rows[1:])
    assert (out / "phase-diagram.svg").stat().st_size > 0


# ---------------------------------------------------------------------------
# entry point


def test_console_script_help():
    exe = shutil.which("fermion-monitor")
    assert exe is not None
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "--grid" in proc.stdout and "oracle-check" in proc.stdout
