import csv
import os

import numpy as np
import pytest

from vefsolve.cli import build_parser, config_from_args, main
from vefsolve.config import ConfigError, ProblemConfig, parse_config
from vefsolve.fem import read_gridfunction_values


def test_defaults_per_experiment():
    assert ProblemConfig.defaults("difflim").outer.anderson == 0
    assert ProblemConfig.defaults("difflim").sn_order == 4
    assert ProblemConfig.defaults("pipe").outer.anderson == 2
    assert ProblemConfig.defaults("pipe").sn_order == 12
    assert ProblemConfig.defaults("mms").discretization.p == 3


def test_ini_round_trip():
    cfg = ProblemConfig.defaults("pipe")
    cfg.discretization.orders = (2, 3)
    cfg.outer.augmented = True
    cfg.problem.eps = (0.5, 1e-3)
    back = parse_config(cfg.to_ini())
    assert back == cfg
    assert back.to_ini() == cfg.to_ini()


def test_unknown_key_and_section_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[run]\nexperiment = pipe\n[outer]\nandersen = 2\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[solver]\ntol = 1\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config("[outer]\ntol = small\n")
    with pytest.raises(ConfigError):
        parse_config("[discretization]\nkind = hdg\n")
    with pytest.raises(ConfigError):
        parse_config("[outer]\nsweeps = 5\n")


def test_metadata_is_flat_text():
    meta = ProblemConfig.defaults("difflim").metadata()
    assert meta["outer.anderson"] == "0" and meta["run.experiment"] == "difflim"
    assert all(isinstance(v, str) for v in meta.values())


def test_flags_override_config(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[outer]\nanderson = 1\n[discretization]\np = 1\n")
    args = build_parser().parse_args(["pipe", "--config", str(path), "--kind", "br2", "--p", "3",
                                      "--refine", "1", "--quadrature", "s4", "--augmented",
                                      "--sweeps", "2", "--precond", "exact"])
    cfg = config_from_args(args)
    assert cfg.outer.anderson == 1 and cfg.outer.augmented and cfg.outer.sweeps == 2
    assert cfg.discretization.kinds == ("br2",) and cfg.discretization.orders == (3,)
    assert cfg.mesh.refines == (1,) and cfg.sn_order == 4 and cfg.inner.precond == "exact"


def test_bad_flag_values_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["pipe", "--kind", "hdg"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["bogus"])


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[outer]\nnonsense = 1\n")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def _headers(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    meta = [l for l in lines if l.startswith("# ")]
    body = [l for l in lines if not l.startswith("#")]
    return meta, body


def _check_outputs(out):
    files = [f for f in os.listdir(out) if f != "config.ini"]
    assert files
    for f in files:
        meta, body = _headers(os.path.join(out, f))
        assert any(m.startswith("# run.experiment=") for m in meta), f
        assert any(m.startswith("# version=") for m in meta), f
    return files


def _run(tmp_path, name, text, *flags):
    cfg = tmp_path / f"{name}.ini"
    cfg.write_text(text)
    out = tmp_path / name
    assert main([name, "--config", str(cfg), "--out", str(out), *flags]) == 0
    return str(out), _check_outputs(str(out))


def test_cli_mms(tmp_path):
    out, files = _run(tmp_path, "mms", "[mesh]\nsizes = 2, 3\norder = 2\n", "--p", "1")
    meta, body = _headers(os.path.join(out, "mms_p1.csv"))
    assert body[0] == "h,ip,br2,mdldg,cg,deviation"
    assert body[-2].startswith("order,")


def test_cli_difflim(tmp_path):
    out, files = _run(tmp_path, "difflim", "[mesh]\nn = 2\n[problem]\neps = 0.1, 0.0001\n"
                      "lineout_points = 5\n", "--p", "1")
    meta, body = _headers(os.path.join(out, "difflim_outer.csv"))
    assert body[0] == "eps,ip,br2,mdldg,cg" and len(body) == 3
    meta, body = _headers(os.path.join(out, "difflim_lineout_ip_eps0.0001.csv"))
    assert body[0] == "s,x,y,value" and len(body) == 6
    rows = np.array([[float(v) for v in r] for r in csv.reader(body[1:])])
    assert np.allclose(rows[:, 2], 0.5) and rows[0, 0] == 0.0 and abs(rows[-1, 0] - 1) < 1e-12


def test_cli_pipe(tmp_path):
    out, files = _run(tmp_path, "pipe", "", "--p", "1", "--refine", "0", "--kind", "cg",
                      "--quadrature", "s4")
    meta, body = _headers(os.path.join(out, "pipe_outer.csv"))
    assert body[0] == "p,ne,cg" and body[1].startswith("1,112,")
    gf = os.path.join(out, "pipe_varphi_cg_p1_ne112.gf")
    head, vals = read_gridfunction_values(gf)
    assert vals.size == 112 * 4 and np.all(np.isfinite(vals))
    assert "pipe_log_cg_p1_ne112.csv" in files and "pipe_inner.csv" in files


def test_cli_mockdata(tmp_path):
    out, files = _run(tmp_path, "mockdata", "[mesh]\nrefines = 0\n[inner]\nmodes = usc, exact\n",
                      "--p", "1")
    meta, body = _headers(os.path.join(out, "mock_precond.csv"))
    assert body[0] == "ne,ndofs,usc,exact,diffusion" and body[1].startswith("112,448,")
    meta, body = _headers(os.path.join(out, "mock_first_outer.csv"))
    assert body[0] == "ne,vef,diffusion,gap"


def test_cli_solve(tmp_path):
    out, files = _run(tmp_path, "solve", "[run]\nproblem = difflim\n[mesh]\nn = 3\n"
                      "[problem]\neps = 0.1\nlineout_points = 7\n", "--p", "1", "--quadrature", "s4")
    assert {"solve_outer.csv", "solve_varphi.gf", "solve_lineout.csv"} <= set(files)
    assert open(os.path.join(out, "config.ini")).read().startswith("[run]")
