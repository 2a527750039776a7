from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goorgrow.cli import (
    ConfigError,
    Kind,
    Scenario,
    SchemeSpec,
    GridSpec,
    main,
    parse_config,
    run_scenario,
    serialize,
    validate,
)
from goorgrow.core import ModelParams
from goorgrow.report import read_csv_body
from goorgrow.waves import decay_roots, minimal_speed


def write(tmp_path, text, name="s.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def last_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return json.loads(err[0])


class TestParse:
    def test_minimal_file_uses_defaults(self):
        s = parse_config("kind = wave_table\n")
        assert s.kind is Kind.WAVE_TABLE
        assert s.params == ModelParams()
        assert s.grid == GridSpec() and s.scheme == SchemeSpec()

    def test_values_and_comments(self):
        s = parse_config("# scenario\nkind = parabolic_run  # inline\n[model]\nchi = 2.0\n; other\n"
                         "chi_list = 1, 2.5\n[grid]\ndz = 0.1\n")
        assert s.params.chi == 2.0
        assert s.chi_list == (1.0, 2.5)
        assert s.grid.dz == 0.1

    def test_duplicate_key_names_both_lines(self):
        with pytest.raises(ConfigError) as info:
            parse_config("kind = wave_table\n[model]\nchi = 2\nchi = 3\n")
        msg = str(info.value)
        assert "'chi'" in msg and "3" in msg and "4" in msg

    def test_unknown_key_reports_line_and_section(self):
        with pytest.raises(ConfigError, match=r"line 3: unknown key 'foo' in \[model\]"):
            parse_config("kind = wave_table\n[model]\nfoo = 1\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("kind = wave_table\n[physics]\n")

    @pytest.mark.parametrize("text", [
        "kind = wave_table\n[model]\nchi = two\n",
        "kind = nonsense\n",
        "kind = wave_table\n[model]\nchi\n",
    ])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)


class TestValidate:
    @pytest.mark.parametrize("text, fragment", [
        ("kind = wave_table\n[model]\nchi = -1\n", "chi must be positive"),
        ("kind = kinetic_run\n[model]\nchi = 2\nepsilon = 0.5\n", "chi"),
        ("kind = parabolic_run\n[model]\nchi = 2\n[scheme]\ndt = 0.1\n[grid]\ndz = 0.05\n", "CFL"),
        ("kind = wave_table\n[scheme]\ntheta = 1.5\n", "theta"),
        ("kind = inside_run\n[scheme]\nfraction = wiggle\n", "fraction"),
        ("kind = wave_table\n[grid]\ndz = 0.07\n", "dz"),
    ])
    def test_rejected(self, text, fragment):
        with pytest.raises(ConfigError, match=fragment):
            parse_config(text)

    def test_validate_accepts_defaults(self):
        validate(Scenario(Kind.WAVE_TABLE))


class TestRoundTrip:
    def test_serialized_defaults_parse_back(self):
        s = parse_config("kind = speed_sweep\nname = demo\n")
        text = serialize(s)
        assert parse_config(text) == s
        assert serialize(parse_config(text)) == text

    @given(st.floats(0.1, 5.0), st.floats(0.05, 0.95), st.floats(0.1, 4.0),
           st.sampled_from(list(Kind)), st.booleans())
    @settings(max_examples=40)
    def test_byte_exact(self, chi, n_th, diff, kind, kinetic):
        base = parse_config(f"kind = {kind.value}\n")
        s = Scenario(kind, "rt", ModelParams(chi=chi, n_threshold=n_th, diffusion_n=diff, epsilon=0.5 / max(chi, 1.0)),
                     kinetic, grid=base.grid, scheme=SchemeSpec(dt=0.001))
        validate(s)
        text = serialize(s)
        again = parse_config(text)
        assert again == s
        assert serialize(again) == text


class TestMain:
    def test_success_writes_wave_table(self, tmp_path, capsys):
        cfg = write(tmp_path, "kind = wave_table\n[model]\nchi_list = 0.5, 2\n[grid]\nz_min = -20\nz_max = 40\n")
        assert main(["--scenario", str(cfg), "--out", str(tmp_path / "o")]) == 0
        header, rows = read_csv_body(tmp_path / "o" / "wave_table.csv")
        assert header == ["chi", "sigma_star", "mu_minus", "mu_plus"]
        for row in rows:
            chi, sigma, mu_m, mu_p = map(float, row)
            assert sigma == minimal_speed(chi)
            assert (mu_m, mu_p) == decay_roots(sigma)
        header, rows = read_csv_body(tmp_path / "o" / "profile.csv")
        assert header[0] == "z" and len(rows) == 1200

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, "kind = wave_table\n[model]\nchi = -1\n")
        assert main(["--scenario", str(cfg)]) == 2
        msg = last_json(capsys)
        assert msg["status"] == "config_error" and "chi must be positive" in msg["message"]

    def test_flag_validation_exit_code(self, tmp_path, capsys):
        assert main(["--kind", "wave_table", "--chi", "-1", "--out", str(tmp_path)]) == 2
        assert "chi must be positive" in last_json(capsys)["message"]

    def test_missing_file_is_config_error(self, tmp_path, capsys):
        assert main(["--scenario", str(tmp_path / "nope.cfg")]) == 2
        assert last_json(capsys)["status"] == "config_error"

    def test_numerical_failure_exit_code(self, tmp_path, capsys):
        # the spectrum needs a longer symmetric domain than this grid provides
        cfg = write(tmp_path, "kind = inside_run\n[model]\nchi = 2\n[grid]\nz_min = -2\nz_max = 2\ndz = 0.5\n"
                              "[scheme]\ntmax = 1\ndt = 0.5\nsample_dt = 0.5\n")
        assert main(["--scenario", str(cfg), "--out", str(tmp_path / "o")]) == 1
        assert last_json(capsys)["status"] == "numerical_failure"

    def test_short_domain_loses_monotonicity(self, tmp_path, capsys):
        # the plateau consumes nutrient below the frozen left boundary value
        cfg = write(tmp_path, "kind = parabolic_run\n[model]\nchi = 2\n[grid]\nz_min = -20\nz_max = 20\n"
                              "dz = 0.1\n[scheme]\ndt = 0.02\ntmax = 1\n")
        assert main(["--scenario", str(cfg), "--out", str(tmp_path / "o")]) == 1
        msg = last_json(capsys)
        assert msg["status"] == "numerical_failure" and "MonotonicityLost" in msg["message"]

    def test_flags_override_file(self, tmp_path, capsys):
        cfg = write(tmp_path, "kind = wave_table\n[model]\nchi = 2\n")
        assert main(["--scenario", str(cfg), "--chi", "3", "--dz", "0.1", "--print-config"]) == 0
        s = parse_config(capsys.readouterr().out)
        assert s.params.chi == 3.0 and s.grid.dz == 0.1

    def test_inside_pushed_outputs(self, tmp_path):
        s = parse_config("kind = inside_run\n[model]\nchi = 2\n[grid]\nz_min = -40\nz_max = 40\ndz = 0.05\n"
                         "[scheme]\ndt = 0.05\ntmax = 4\nsample_dt = 1\n")
        names = sorted(p.name for p in run_scenario(s, tmp_path))
        assert names == ["decay.csv", "eigen.csv", "gap.csv"]
        header, rows = read_csv_body(tmp_path / "gap.csv")
        gap = dict(zip(header, map(float, rows[0])))
        assert gap["gamma_formula"] == 1 / 16
        assert gap["lambda1"] >= 0.95 / 16
        _, decay = read_csv_body(tmp_path / "decay.csv")
        assert [float(r[0]) for r in decay] == [0.0, 1.0, 2.0, 3.0, 4.0]


class TestOutputFormat:
    @pytest.fixture(scope="class")
    @staticmethod
    def runs(tmp_path_factory):
        s = parse_config("kind = parabolic_run\n[model]\nchi = 2\n[grid]\nz_min = -50\nz_max = 30\ndz = 0.1\n"
                         "[scheme]\ndt = 0.02\ntmax = 1\nsample_dt = 0.2\n")
        a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
        run_scenario(s, a)
        run_scenario(s, b)
        return a, b

    def test_deterministic_bodies(self, runs):
        a, b = runs
        for name in ("trajectory.csv", "snapshot.csv"):
            assert read_csv_body(a / name) == read_csv_body(b / name)

    def test_line_endings_and_precision(self, runs):
        raw = (runs[0] / "trajectory.csv").read_bytes()
        assert b"\r" not in raw
        lines = raw.decode().splitlines()
        assert lines[0].startswith("# goorgrow ")
        assert "# model.chi = 2.0" in lines
        header, rows = read_csv_body(runs[0] / "trajectory.csv")
        assert header == ["t", "xbar", "xdot_ode", "xdot_slope", "mass_rho", "dn_min"]
        xbar = rows[-1][1]
        assert float(xbar) == float("%.17g" % float(xbar))
        assert len(rows) == 6

    def test_snapshot_columns(self, runs):
        header, rows = read_csv_body(runs[0] / "snapshot.csv")
        assert header == ["z", "rho", "n"]
        values = np.array(rows, dtype=float)
        assert values.shape == (800, 3)
        assert np.all(values[:, 1] >= 0) and np.all((values[:, 2] >= 0) & (values[:, 2] <= 1))


def test_kinetic_run_outputs(tmp_path):
    s = parse_config("kind = kinetic_run\n[model]\nchi = 2\nepsilon = 0.25\n[grid]\nz_min = -50\nz_max = 30\n"
                     "dz = 0.05\n[scheme]\ntmax = 1\nsample_dt = 0.25\n")
    run_scenario(s, tmp_path)
    header, rows = read_csv_body(tmp_path / "snapshot.csv")
    assert header == ["z", "f_plus", "f_minus", "rho", "n"]
    v = np.array(rows, dtype=float)
    np.testing.assert_allclose(v[:, 3], 0.5 * (v[:, 1] + v[:, 2]), rtol=1e-15)
