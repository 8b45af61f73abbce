"""Tests for the command line (``python -m lsvx``)."""

from __future__ import annotations

import csv
import json
import math

import pytest
from lsvx.__main__ import EXIT_CONFIG, EXIT_CRITERION, main

KOU_TAIL = 0.6 * math.exp(-2.5)

# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _write_config(tmp_path, **sections) -> str:
    sections.setdefault("output", {"directory": str(tmp_path / "out")})
    path = tmp_path / "run.json"
    path.write_text(json.dumps(sections))
    return str(path)


def _read_csv(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


def _exit_code(argv) -> int:
    with pytest.raises(SystemExit) as exc_info:
        main(argv)
    return exc_info.value.code


# ---------------------------------------------------------------------------
# expand / density
# ---------------------------------------------------------------------------


class TestExpand:
    def test_kou_tail_first_order(self, tmp_path, capsys):
        config = _write_config(
            tmp_path,
            task={"kind": "tail", "z_grid": [0.5], "order": 1, "t_grid": [0.001, 0.01]},
        )
        main(["expand", "--config", config])
        out = tmp_path / "out"

        rows = _read_csv(out / "coefficients.csv")
        assert len(rows) == 1
        assert rows[0]["kind"] == "tail"
        assert float(rows[0]["cbreve_1"]) == pytest.approx(KOU_TAIL, rel=1e-6)

        curves = _read_csv(out / "curves.csv")
        assert [float(r["t"]) for r in curves] == [0.001, 0.01]
        assert all(r["fourier"] == "" for r in curves)
        assert (out / "tail_z0.5.dat").exists()
        assert "cbreve = 0.0492" in capsys.readouterr().out

    def test_manifest_written(self, tmp_path):
        config = _write_config(tmp_path, task={"z_grid": [0.5], "order": 1})
        main(["expand", "--config", config, "--seed", "11"])
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["command"] == "expand"
        assert manifest["seeds"] == [11]
        assert "coefficients.csv" in manifest["outputs"]
        assert manifest["config"]["task"]["order"] == 1

    def test_out_override(self, tmp_path):
        config = _write_config(tmp_path, task={"z_grid": [0.5], "order": 1})
        other = tmp_path / "elsewhere"
        main(["expand", "--config", config, "--out", str(other)])
        assert (other / "coefficients.csv").exists()
        assert not (tmp_path / "out").exists()


class TestConfigErrors:
    def test_at_the_money_rejected(self, tmp_path, capsys):
        config = _write_config(tmp_path, task={"kind": "call", "z_grid": [0.0]})
        assert _exit_code(["expand", "--config", config]) == EXIT_CONFIG
        assert "z = 0" in capsys.readouterr().err

    def test_density_with_finite_activity(self, tmp_path, capsys):
        levy = {"kind": "merton", "params": {"lam": 1.0, "m": -0.1, "delta": 0.15}}
        config = _write_config(tmp_path, model={"levy": levy})
        assert _exit_code(["density", "--config", config]) == EXIT_CONFIG
        assert "infinite-activity" in capsys.readouterr().err

    def test_epsilon_override_checked(self, tmp_path, capsys):
        config = _write_config(tmp_path, task={"z_grid": [0.5], "order": 2})
        assert _exit_code(["expand", "--config", config, "--epsilon", "0.3"]) == EXIT_CONFIG
        assert "z₀/(n+1)" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert _exit_code(["expand", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_no_command_shows_help(self, capsys):
        assert _exit_code([]) == 0
        assert "usage" in capsys.readouterr().out.lower()


# ---------------------------------------------------------------------------
# smile
# ---------------------------------------------------------------------------


class TestSmile:
    def test_rows_outside_asymptotic_range_report_errors(self, tmp_path):
        config = _write_config(
            tmp_path,
            model={"sigma0": 0.2},
            task={"kind": "smile", "z_grid": [0.2], "t_grid": [0.5, 1.0]},
        )
        main(["smile", "--config", config])
        rows = _read_csv(tmp_path / "out" / "smile.csv")
        assert [float(r["tau"]) for r in rows] == [0.5, 1.0]
        late = rows[1]
        assert float(late["price"]) > 0.0
        assert float(late["implied_var"]) > 0.0
        assert "0 < tau < 1" in late["error"]
        assert late["v0"] == ""
        assert float(rows[0]["v0"]) > 0.0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


class TestVerify:
    def test_sv_table_criterion_passes(self, tmp_path, capsys):
        config = _write_config(tmp_path, task={"kind": "verify", "criteria": [5]})
        main(["verify", "--config", config])
        report = json.loads((tmp_path / "out" / "verify.json").read_text())
        assert report["all_passed"] is True
        assert report["results"][0]["criterion_id"] == 5
        assert "1/1 passed" in capsys.readouterr().out

    def test_corrupted_coefficients_fail(self, tmp_path):
        config = _write_config(tmp_path, task={"kind": "verify", "criteria": [5]})
        code = _exit_code(["verify", "--config", config, "--corrupt", "0.1"])
        assert code == EXIT_CRITERION
        report = json.loads((tmp_path / "out" / "verify.json").read_text())
        assert report["failed"] == 1
