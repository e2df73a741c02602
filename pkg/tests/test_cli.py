import json
from pathlib import Path

import numpy as np
import pytest

from perisolve import cli
from perisolve.discretize import read_field_csv


def write_config(tmp_path: Path, doc: dict, name: str = "cfg.json") -> str:
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def small_problem(**overrides) -> dict:
    doc = {
        "p": 2.0,
        "m": 3.0,
        "L": 1.0,
        "T": 1.0,
        "M": 8,
        "N": 8,
        "forcing": {
            "kind": "terms",
            "terms": [
                {
                    "amplitude": 1.0,
                    "space_mode": 1,
                    "space_profile": "sin",
                    "time_mode": 1,
                    "time_profile": "sin",
                }
            ],
        },
    }
    doc.update(overrides)
    return doc


class TestLoadConfig:
    def test_missing_file(self):
        with pytest.raises(cli.ConfigError, match="cannot read"):
            cli.load_config("/nonexistent/cfg.json")

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        with pytest.raises(cli.ConfigError, match="invalid JSON"):
            cli.load_config(str(p))

    def test_top_level_must_be_object(self, tmp_path):
        p = tmp_path / "list.json"
        p.write_text("[1, 2]")
        with pytest.raises(cli.ConfigError, match="top level"):
            cli.load_config(str(p))

    def test_schema_version(self, tmp_path):
        path = write_config(tmp_path, {"schema": 2, "problem": small_problem()})
        with pytest.raises(cli.ConfigError, match="unsupported schema version 2"):
            cli.load_config(path)

    def test_bad_route(self, tmp_path):
        path = write_config(
            tmp_path, {"route": "direct", "problem": small_problem()}
        )
        with pytest.raises(cli.ConfigError) as err:
            cli.load_config(path)
        assert err.value.key == "route"

    def test_errors_name_the_dotted_key(self, tmp_path):
        cases = [
            ({"problem": small_problem(m=0.5)}, "problem.m"),
            ({"problem": small_problem(forcing={"kind": "blob"})}, "problem.forcing"),
            (
                {
                    "problem": small_problem(
                        diffusion={"kind": "values", "values": [1.0, 2.0]}
                    )
                },
                "problem.diffusion.values",
            ),
            (
                {"problem": small_problem(nonlinearity={"kind": "cubic"})},
                "problem.nonlinearity.kind",
            ),
            ({"problem": small_problem(), "cascade": {"fp_tol": 0.0}}, "cascade"),
            ({"problem": small_problem(M="8")}, "problem.M"),
            ({}, "problem"),
        ]
        for doc, key in cases:
            path = write_config(tmp_path, doc)
            with pytest.raises(cli.ConfigError) as err:
                cli.load_config(path)
            assert err.value.key == key, str(err.value)

    def test_defaults_and_override(self, tmp_path):
        path = write_config(tmp_path, {"problem": small_problem()})
        cfg = cli.load_config(path, output_override=str(tmp_path / "o"))
        assert cfg.route == "auto"
        assert cfg.seed == 0
        assert cfg.output_dir == str(tmp_path / "o")
        assert cfg.problem.m == 3.0
        assert cfg.cascade.fp_tol == 1e-10


class TestSolve:
    def test_zero_forcing_writes_zero_trajectory(self, tmp_path):
        doc = {
            "output_dir": str(tmp_path / "out"),
            "problem": small_problem(forcing={"kind": "zero"}),
        }
        code = cli.cmd_solve(cli.load_config(write_config(tmp_path, doc)))
        assert code == cli.EXIT_OK
        u, t, x = read_field_csv(str(tmp_path / "out" / "trajectory.csv"))
        assert u.shape == (8, 8)
        assert np.all(u == 0.0)
        assert (tmp_path / "out" / "trajectory.dat").exists()
        rep = json.loads((tmp_path / "out" / "report.json").read_text())
        assert rep["command"] == "solve"
        assert rep["exit_code"] == 0
        assert rep["converged"] is True
        assert rep["config"] == doc  # config echoed verbatim

    def test_nonconvergence_exits_2_but_reports(self, tmp_path):
        # one damped iteration at tiny omega cannot reach tolerance
        doc = {
            "output_dir": str(tmp_path / "st"),
            "problem": small_problem(),
            "cascade": {
                "epsilon_schedule": [0.5],
                "max_fp_iter": 1,
                "anderson_depth": 0,
                "omega": 1e-3,
            },
        }
        code = cli.cmd_solve(cli.load_config(write_config(tmp_path, doc)))
        assert code == cli.EXIT_NOCONV
        rep = json.loads((tmp_path / "st" / "report.json").read_text())
        assert rep["exit_code"] == 2
        assert rep["converged"] is False
        assert (tmp_path / "st" / "trajectory.csv").exists()

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        doc = {"problem": small_problem(), "cascade": {"fp_tol": 1e-8}}
        path = write_config(tmp_path, doc)
        outs = []
        for name in ("a", "b"):
            cfg = cli.load_config(path, output_override=str(tmp_path / name))
            assert cli.cmd_solve(cfg) == cli.EXIT_OK
            outs.append((tmp_path / name / "trajectory.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_trajectory_csv_format(self, tmp_path):
        doc = {
            "output_dir": str(tmp_path / "fmt"),
            "problem": small_problem(M=4, N=4),
            "cascade": {"fp_tol": 1e-8},
        }
        cli.cmd_solve(cli.load_config(write_config(tmp_path, doc)))
        lines = (tmp_path / "fmt" / "trajectory.csv").read_text().splitlines()
        assert lines[0] == "t,x,value"
        assert len(lines) == 1 + 4 * 4
        first = lines[1].split(",")
        assert len(first) == 3
        float(first[2])  # parses


def test_cmd_verify_bundled_config(tmp_path, bundled_config_dir):
    cfg = cli.load_config(
        str(bundled_config_dir / "nonlinear_diffusion.json"),
        output_override=str(tmp_path / "v"),
    )
    code = cli.cmd_verify(cfg)
    assert code == cli.EXIT_OK
    rep = json.loads((tmp_path / "v" / "report.json").read_text())
    assert rep["command"] == "verify"
    assert rep["invariants"]["all_passed"] is True
    assert rep["growth_audit"]["all_finite"] is True
    assert (tmp_path / "v" / "growth_audit.csv").exists()


def test_cmd_mms_discrete_levels(tmp_path):
    doc = {
        "output_dir": str(tmp_path / "m"),
        "problem": small_problem(),
        "cascade": {"fp_tol": 1e-8, "stage_tol": 1e-8},
        "mms": {
            "exact": "separable_bump",
            "mode": "discrete_exact",
            "levels": [[6, 6], [8, 8]],
        },
    }
    code = cli.cmd_mms(cli.load_config(write_config(tmp_path, doc)), jobs=2)
    assert code == cli.EXIT_OK
    rep = json.loads((tmp_path / "m" / "report.json").read_text())
    cols = rep["table"]["columns"]
    errs = [row[cols.index("error")] for row in rep["table"]["rows"]]
    assert max(errs) <= 1e-7
    assert (tmp_path / "m" / "mms.csv").exists()
    with pytest.raises(cli.ConfigError, match="mms.exact"):
        bad = dict(doc, mms={"exact": "wavefront"})
        cli.cmd_mms(cli.load_config(write_config(tmp_path, bad, "bad.json")))


def test_cmd_mosco_identity_control(tmp_path):
    doc = {
        "output_dir": str(tmp_path / "mo"),
        "problem": small_problem(M=10, N=10),
        "mosco": {"kind": "identity", "n_max": 2},
    }
    code = cli.cmd_mosco(cli.load_config(write_config(tmp_path, doc)))
    assert code == cli.EXIT_OK
    rep = json.loads((tmp_path / "mo" / "report.json").read_text())
    cols = rep["table"]["columns"]
    errs = [row[cols.index("error")] for row in rep["table"]["rows"]]
    assert max(errs) <= rep["table"]["meta"]["noise_floor"]


def test_cmd_sweep_default_pair_matrix(tmp_path):
    doc = {
        "output_dir": str(tmp_path / "sw"),
        "problem": small_problem(),
        "cascade": {"fp_tol": 1e-8},
    }
    code = cli.cmd_sweep(cli.load_config(write_config(tmp_path, doc)), jobs=2)
    assert code == cli.EXIT_OK
    subdirs = sorted(d.name for d in (tmp_path / "sw").iterdir() if d.is_dir())
    assert subdirs == [
        "p2.5_m3_eps0.0001",
        "p2_m1.5_eps0.0001",
        "p2_m2_eps0.0001",
        "p2_m3_eps0.0001",
        "p3_m2_eps0.0001",
    ]
    summary = (tmp_path / "sw" / "summary.csv").read_text().splitlines()
    assert summary[0] == "p,m,epsilon_final,route,converged,residual"
    assert len(summary) == 6
    routes = {line.split(",")[3] for line in summary[1:]}
    assert routes == {"plain", "mu"}
    assert all(line.split(",")[4] == "1" for line in summary[1:])
    for sub in subdirs:
        assert (tmp_path / "sw" / sub / "trajectory.csv").exists()


def test_cmd_sweep_requires_power_map(tmp_path):
    doc = {
        "problem": small_problem(
            nonlinearity={
                "kind": "piecewise_linear",
                "breakpoints": [[-1.0, -1.0], [1.0, 1.0]],
            }
        )
    }
    with pytest.raises(cli.ConfigError, match="power rate map"):
        cli.cmd_sweep(cli.load_config(write_config(tmp_path, doc)))


class TestMain:
    def test_dispatch_and_quiet(self, tmp_path):
        doc = {"problem": small_problem(forcing={"kind": "zero"})}
        path = write_config(tmp_path, doc)
        code = cli.main(
            ["solve", "--config", path, "--output", str(tmp_path / "o"), "--quiet"]
        )
        assert code == 0

    def test_config_error_exits_1(self, tmp_path, capsys):
        path = write_config(tmp_path, {"problem": small_problem(m=0.5)})
        code = cli.main(["solve", "--config", path, "--quiet"])
        assert code == cli.EXIT_CONFIG
        assert "problem.m" in capsys.readouterr().err

    def test_missing_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit):
            cli.main([])
