import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from ddcontrol.cli import cli

MANIP_CFG = {
    "mode": "contractive",
    "plant": "manipulator",
    "dictionary": {"n": 4, "terms": ["cos(x1)"]},
    "set": None,
    "experiment": {"T": 10, "dt": 0.05, "input": "uniform:-0.1:0.1", "input_seed": 3,
                   "x0_seed": 7, "x0_range": 0.1},
}


@pytest.fixture()
def runner():
    return CliRunner()


def _write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_experiment_writes_dataset_and_sidecar(runner, tmp_path):
    out = tmp_path / "ds.csv"
    r = runner.invoke(
        cli,
        ["experiment", "--plant", "manipulator", "--T", "10", "--input", "uniform:-0.1:0.1",
         "--seed", "7", "--x0-seed", "7", "--noise", "bounded:0.01", "-o", str(out)],
    )
    assert r.exit_code == 0, r.output
    assert out.exists()
    sidecar = json.loads(out.with_suffix(".json").read_text())
    assert "0.01" in sidecar["disturbance"]
    assert len(out.read_text().splitlines()) == 11


def test_experiment_exo_sidecar_round_trip(runner, tmp_path):
    out = tmp_path / "ds.csv"
    r = runner.invoke(
        cli,
        ["experiment", "--plant", "manipulator", "--T", "6", "--seed", "1",
         "--exo", "const:q=4", "-o", str(out)],
    )
    assert r.exit_code == 0, r.output
    sidecar = json.loads(out.with_suffix(".json").read_text())
    assert "ExoModel" in sidecar["disturbance"]


def test_experiment_unknown_plant_is_config_error(runner, tmp_path):
    r = runner.invoke(cli, ["experiment", "--plant", "bogus", "-o", str(tmp_path / "x.csv")])
    assert r.exit_code == 1


def test_synthesize_feasible_exit_zero(runner, tmp_path):
    cfg = dict(MANIP_CFG, output=str(tmp_path / "res.json"))
    r = runner.invoke(cli, ["synthesize", "--config", _write_cfg(tmp_path, cfg)])
    assert r.exit_code == 0, r.output
    res = json.loads((tmp_path / "res.json").read_text())
    assert res["feasible"] and res["mode"] == "contractive"
    assert "alpha=" in r.output


def test_synthesize_deterministic_output(runner, tmp_path):
    cfg = dict(MANIP_CFG, output=str(tmp_path / "a.json"))
    runner.invoke(cli, ["synthesize", "--config", _write_cfg(tmp_path, cfg)])
    cfg["output"] = str(tmp_path / "b.json")
    runner.invoke(cli, ["synthesize", "--config", _write_cfg(tmp_path, cfg, "cfg2.json")])
    a = (tmp_path / "a.json").read_bytes()
    b = (tmp_path / "b.json").read_bytes()
    assert a == b


def test_synthesize_infeasible_exit_two(runner, tmp_path):
    cfg = dict(MANIP_CFG, output=str(tmp_path / "res.json"))
    cfg["params"] = {"R_Q_diag": [50.0, 50.0, 50.0, 50.0]}  # absurd growth bound
    r = runner.invoke(cli, ["synthesize", "--config", _write_cfg(tmp_path, cfg)])
    assert r.exit_code == 2, r.output


def test_synthesize_missing_dictionary_is_config_error(runner, tmp_path):
    cfg = {"mode": "contractive", "plant": "manipulator"}
    r = runner.invoke(cli, ["synthesize", "--config", _write_cfg(tmp_path, cfg)])
    assert r.exit_code == 1


def test_synthesize_toml_config(runner, tmp_path):
    toml = tmp_path / "cfg.toml"
    toml.write_text(
        'mode = "contractive"\n'
        'plant = "manipulator"\n'
        f'output = "{tmp_path / "res.json"}"\n'
        "[dictionary]\n"
        "n = 4\n"
        'terms = ["cos(x1)"]\n'
        "[experiment]\n"
        "T = 10\n"
        "dt = 0.05\n"
        'input = "uniform:-0.1:0.1"\n'
        "input_seed = 3\n"
        "x0_seed = 7\n"
        "x0_range = 0.1\n"
    )
    r = runner.invoke(cli, ["synthesize", "--config", str(toml)])
    assert r.exit_code == 0, r.output


def test_certify_pass_and_fail_exit_codes(runner, tmp_path):
    cfg = dict(MANIP_CFG, output=str(tmp_path / "res.json"))
    runner.invoke(cli, ["synthesize", "--config", _write_cfg(tmp_path, cfg)])
    dict_arg = json.dumps(MANIP_CFG["dictionary"])
    r = runner.invoke(
        cli, ["certify", "--result", str(tmp_path / "res.json"), "--dictionary", dict_arg,
              "--samples", "2000", "-o", str(tmp_path / "cert.json")],
    )
    assert r.exit_code == 0, r.output
    # sabotage the stored gain: the certificate must fail with exit code 4
    res = json.loads((tmp_path / "res.json").read_text())
    res["M"] = (np.asarray(res["M"]) * -1.0).tolist()
    (tmp_path / "bad.json").write_text(json.dumps(res))
    r = runner.invoke(
        cli, ["certify", "--result", str(tmp_path / "bad.json"), "--dictionary", dict_arg,
              "--samples", "2000"],
    )
    assert r.exit_code == 4


def test_simulate_writes_trajectory(runner, tmp_path):
    cfg = dict(MANIP_CFG, output=str(tmp_path / "res.json"))
    runner.invoke(cli, ["synthesize", "--config", _write_cfg(tmp_path, cfg)])
    out = tmp_path / "traj.csv"
    r = runner.invoke(
        cli, ["simulate", "--plant", "manipulator", "--result", str(tmp_path / "res.json"),
              "--dictionary", json.dumps(MANIP_CFG["dictionary"]), "--x0", "0.5,0,0,0",
              "--horizon", "2.0", "-o", str(out)],
    )
    assert r.exit_code == 0, r.output
    assert out.read_text().splitlines()[0] == "t,x1,x2,x3,x4,u1"


def test_reproduce_unknown_name(runner, tmp_path):
    r = runner.invoke(cli, ["reproduce", "nope", "--outdir", str(tmp_path)])
    assert r.exit_code == 1


def test_reproduce_surge_roa_writes_svg(runner, tmp_path):
    r = runner.invoke(cli, ["reproduce", "surge-roa", "--outdir", str(tmp_path)])
    assert r.exit_code == 0, r.output
    svg = (tmp_path / "surge-roa.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg
    report = json.loads((tmp_path / "surge-roa.json").read_text())
    assert report["passed"] and report["summary"]["gamma"] >= 90.0


def test_print_defaults(runner):
    r = runner.invoke(cli, ["print-defaults"])
    assert r.exit_code == 0
    payload = json.loads(r.output)
    assert payload["exit_codes"]["infeasible"] == 2
    assert "DDCONTROL_MAX_ITER" in payload["env"]
