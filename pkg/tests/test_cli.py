"""
Tests for the stolz CLI.

Uses typer.testing.CliRunner to invoke commands against small TOML run files.
"""

import csv
import json
import math

import pytest
from typer.testing import CliRunner

from app.cli.config import load_run_config
from app.cli.main import app

runner = CliRunner()


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _invoke(command, config, out, *extra):
    return runner.invoke(app, [command, "--config", str(config), "--out", str(out), *extra])


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


class TestMain:
    def test_version(self):
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert "stolz-jacobi" in result.output

    def test_help_lists_commands(self):
        result = runner.invoke(app, ["--help"])
        assert result.exit_code == 0
        for command in ("density", "asymptotics", "diagnose", "turan", "bounds"):
            assert command in result.output


# ---------------------------------------------------------------------------
# density
# ---------------------------------------------------------------------------


class TestDensity:
    def test_free_family(self, free_config, tmp_path):
        out = tmp_path / "out"
        result = _invoke("density", free_config, out)
        assert result.exit_code == 0, result.output
        assert (out / "config.toml").exists()
        assert (out / "density.json").exists()

        rows = _rows(out / "density.csv")
        assert len(rows) == 31
        assert {row["status"] for row in rows} == {"ok"}
        centre = min(rows, key=lambda row: abs(float(row["x"])))
        assert float(centre["nu_prime"]) == pytest.approx(1 / math.pi, abs=1e-9)
        assert "mu_L_16" in rows[0] and "mu_L_32" in rows[0]

    def test_report_records(self, free_config, tmp_path):
        out = tmp_path / "out"
        _invoke("density", free_config, out)
        report = json.loads((out / "density.json").read_text())
        assert report["command"] == "density"
        assert report["summary"]["points"] == 31
        assert report["summary"]["converged"] == 31
        assert len(report["records"]) == 31

    def test_config_echo_reloads(self, free_config, tmp_path):
        out = tmp_path / "out"
        _invoke("density", free_config, out)
        assert load_run_config(out / "config.toml") == load_run_config(free_config)

    def test_csv_only(self, free_config, tmp_path):
        out = tmp_path / "out"
        result = _invoke("density", free_config, out, "--format", "csv")
        assert result.exit_code == 0
        assert (out / "density.csv").exists()
        assert not (out / "density.json").exists()

    def test_unknown_format(self, free_config, tmp_path):
        result = _invoke("density", free_config, tmp_path / "out", "--format", "xml")
        assert result.exit_code == 2

    def test_thread_count_does_not_change_output(self, write_config, free_config_text, tmp_path):
        config = write_config(free_config_text.replace("grid.count = 31", "grid.count = 150"))
        one, four = tmp_path / "one", tmp_path / "four"
        assert _invoke("density", config, one, "--threads", "1").exit_code == 0
        assert _invoke("density", config, four, "--threads", "4").exit_code == 0
        assert (one / "density.csv").read_bytes() == (four / "density.csv").read_bytes()

    def test_majority_outside_bands(self, write_config, free_config_text, tmp_path):
        text = free_config_text.replace("grid.lo = -1.5", "grid.lo = 3.0").replace(
            "grid.hi = 1.5", "grid.hi = 4.0"
        )
        out = tmp_path / "out"
        result = _invoke("density", write_config(text), out)
        assert result.exit_code == 3
        error = json.loads((out / "error.json").read_text())
        assert error["failed"] == error["total"] == 31
        assert not (out / "density.csv").exists()

    def test_empty_interval(self, write_config, free_config_text, tmp_path):
        text = free_config_text.replace("grid.lo = -1.5", "grid.lo = 1.5")
        result = _invoke("density", write_config(text), tmp_path / "out")
        assert result.exit_code == 2

    def test_missing_config(self, tmp_path):
        result = _invoke("density", tmp_path / "absent.toml", tmp_path / "out")
        assert result.exit_code == 2


# ---------------------------------------------------------------------------
# asymptotics, turan, bounds
# ---------------------------------------------------------------------------


class TestAsymptotics:
    def test_free_family_fits(self, free_config, tmp_path):
        out = tmp_path / "out"
        result = _invoke("asymptotics", free_config, out)
        assert result.exit_code == 0, result.output
        rows = _rows(out / "sinefit.csv")
        assert len(rows) == 31
        for row in rows:
            assert row["status"] == "ok"
            assert float(row["tail_rms"]) < 1e-6
        report = json.loads((out / "sinefit.json").read_text())
        assert report["summary"]["within_tolerance"] == 31


class TestTuran:
    def test_free_family(self, free_config, tmp_path):
        out = tmp_path / "out"
        result = _invoke("turan", free_config, out)
        assert result.exit_code == 0, result.output
        rows = _rows(out / "turan.csv")
        assert list(rows[0]) == ["x", "status", "g_0", "spread"]
        for row in rows:
            assert float(row["g_0"]) == pytest.approx(1.0, abs=1e-10)
        report = json.loads((out / "turan.json").read_text())
        assert report["summary"]["residues"] == [0]


class TestBounds:
    def test_free_family(self, write_config, free_config_text, tmp_path):
        config = write_config(free_config_text.replace("grid.count = 31", "grid.count = 5"))
        out = tmp_path / "out"
        result = _invoke("bounds", config, out)
        assert result.exit_code == 0, result.output
        rows = _rows(out / "bounds.csv")
        assert len(rows) == 5
        for row in rows:
            assert row["status"] == "ok"
            assert float(row["c_low"]) <= float(row["c_high"])


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def _memberships(out):
    report = json.loads((out / "stolz.json").read_text())
    return report["summary"]["membership"]


class TestDiagnose:
    def test_free_family_is_consistent(self, free_config, tmp_path):
        out = tmp_path / "out"
        result = _invoke("diagnose", free_config, out)
        assert result.exit_code == 0, result.output
        assert set(_memberships(out).values()) == {"consistent"}
        assert (out / "carleman.json").exists()
        recon = json.loads((out / "reconstruction.json").read_text())
        assert recon["summary"]["worst_deviation"] < 1e-10

    def test_alternating_potential(self, write_config, tmp_path):
        text = """\
family.kind = "custom"
family.a_values = [1.0]
family.b_values = [1.0, -1.0]
grid.lo = -0.5
grid.hi = 0.5
grid.count = 5
numerics.n_max = 512
stolz.length = 1024
stolz.reconstruction_span = 100
"""
        out = tmp_path / "out"
        result = _invoke("diagnose", write_config(text), out)
        assert result.exit_code == 0, result.output
        assert _memberships(out)["transfer:1,0"] == "inconsistent"

    @pytest.mark.slow
    def test_intro_family_needs_three_levels(self, write_config, tmp_path):
        text = """\
family.kind = "intro_oscillation"
family.gamma = 0.5
grid.lo = -1.0
grid.hi = 1.0
grid.count = 5
numerics.r = 3
numerics.n_max = 2048
stolz.length = 4096
stolz.reconstruction_span = 100
"""
        out = tmp_path / "out"
        result = _invoke("diagnose", write_config(text), out)
        assert result.exit_code == 0, result.output
        memberships = _memberships(out)
        assert memberships["transfer:3,0"] == "consistent"
        assert memberships["transfer:1,0"] == "inconsistent"
