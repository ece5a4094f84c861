import json
import subprocess
import sys

import numpy as np
import pytest

from empgateaux.cli import build_parser, main
from empgateaux.mdp import LinearConstraintSet, random_mdp, single_state_mdp


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_estimate_discrete_cube(capsys, tmp_path):
    path = tmp_path / "r.json"
    code, out, _ = run(capsys, "estimate", "--dgp", "discrete-cube", "--functional", "mpo", "--eps", "1e-6", "--out", str(path))
    assert code == 0
    rep = json.loads(path.read_text())
    assert rep["one_step"] == pytest.approx(0.5, abs=1e-4)
    assert rep["schema_version"] == 1
    assert out.startswith("plugin=0.5 one_step=0.5")


def test_estimate_missing_file(capsys, tmp_path):
    missing = tmp_path / "absent.csv"
    code, _, err = run(capsys, "estimate", "--data", str(missing))
    assert code == 3 and str(missing) in err


def test_estimate_eps_zero(capsys):
    code, _, err = run(capsys, "estimate", "--eps", "0")
    assert code == 2 and "eps must be positive" in err


def test_estimate_malformed_data(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,a,y\n0.1,1,oops\n")
    code, _, err = run(capsys, "estimate", "--data", str(path))
    assert code == 3 and "bad.csv" in err


def test_bad_flag_value_is_config_error():
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--eps", "abc"])
    assert exc.value.code == 2


def test_dump_config_roundtrip(capsys, tmp_path):
    code, dumped, _ = run(capsys, "sweep", "--h", "0.1", "--eps-grid", "1e-2,1e-3", "--dump-config")
    assert code == 0
    cfg = json.loads(dumped)
    assert cfg["h"] == 0.1 and cfg["eps_grid"] == [1e-2, 1e-3] and cfg["schema_version"] == 1
    path = tmp_path / "cfg.json"
    path.write_text(dumped)
    code, again, _ = run(capsys, "sweep", "--config", str(path), "--dump-config")
    assert again == dumped
    # explicit flags beat the file
    code, over, _ = run(capsys, "sweep", "--config", str(path), "--h", "0.2", "--dump-config")
    assert json.loads(over)["h"] == 0.2


def test_config_rejects_unknown_and_wrong_command(capsys, tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"bandwith": 0.1}))
    assert run(capsys, "estimate", "--config", str(path))[0] == 2
    path.write_text(json.dumps({"command": "mdp"}))
    assert run(capsys, "estimate", "--config", str(path))[0] == 2
    assert run(capsys, "estimate", "--config", str(tmp_path / "none.json"))[0] == 2


def test_help_lists_flags():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    assert set(sub) == {"estimate", "dtr", "sweep", "compare", "mdp"}
    text = sub["mdp"].format_help()
    for flag in ("--strict-nondegenerate", "--validate", "--dump-config", "--threads", "--seed"):
        assert flag in text


def test_sweep_csv_and_svg(capsys, tmp_path):
    csv_path, svg_path = tmp_path / "s.csv", tmp_path / "s.svg"
    code, _, _ = run(
        capsys, "sweep", "--dgp", "discrete-cube", "--eps-grid", "1e-1,1e-2,1e-3",
        "--lambda-grid", "0.1,0.05", "--out", str(csv_path), "--svg", str(svg_path),
    )
    assert code == 0
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 1 + 1 + 3
    assert all(len(line.split(",")) == 3 for line in lines[1:])
    assert svg_path.read_text().startswith("<svg")


def test_sweep_threads_do_not_change_output(capsys, tmp_path):
    outs = []
    for threads in ("1", "8"):
        path = tmp_path / f"s{threads}.csv"
        args = ["sweep", "--n", "120", "--n-obs", "15", "--eps-grid", "1e-2,1e-4", "--lambda-grid", "0.2,0.05"]
        assert run(capsys, *args, "--threads", threads, "--out", str(path))[0] == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_mdp_single_state(capsys, tmp_path):
    spec = tmp_path / "m.json"
    spec.write_text(json.dumps(single_state_mdp().to_dict()))
    out_path = tmp_path / "r.json"
    code, _, _ = run(capsys, "mdp", "--spec", str(spec), "--out", str(out_path))
    rep = json.loads(out_path.read_text())
    assert code == 0 and rep["derivatives"][0]["fd"] == 0.0


def test_mdp_validate(capsys):
    code, out, _ = run(capsys, "mdp", "--random", "5,3", "--validate")
    assert code == 0
    worst = float(out.split("max |fd - closed_form| = ")[1])
    assert worst <= 1e-4


def test_mdp_infeasible(capsys, tmp_path):
    mdp = random_mdp(3, 2, seed=0)
    spec, cons = tmp_path / "m.json", tmp_path / "c.json"
    spec.write_text(json.dumps(mdp.to_dict()))
    cons.write_text(json.dumps(LinearConstraintSet(np.ones((1, 6)), ("<=",), [0.5]).to_dict()))
    assert run(capsys, "mdp", "--spec", str(spec), "--constraints", str(cons))[0] == 5


def test_mdp_strict_degenerate(capsys, tmp_path):
    P = np.zeros((2, 2, 2))
    P[:, :, 0] = 1.0
    spec = tmp_path / "m.json"
    spec.write_text(json.dumps({"P": P.tolist(), "r": [[1, 1], [0, 0]], "gamma": 0.5, "mu0": [1, 0]}))
    assert run(capsys, "mdp", "--spec", str(spec))[0] == 0
    assert run(capsys, "mdp", "--spec", str(spec), "--strict-nondegenerate")[0] == 6


def test_mdp_one_step_from_triples(capsys, tmp_path):
    out_path = tmp_path / "r.json"
    code, _, _ = run(capsys, "mdp", "--random", "3,2", "--n-triples", "200", "--estimate", "--out", str(out_path))
    rep = json.loads(out_path.read_text())
    assert code == 0 and rep["one_step"]["n"] == 200


def test_dtr_validate(capsys):
    code, out, _ = run(capsys, "dtr", "--validate")
    assert code == 0
    assert float(out.split("= ")[-1]) <= 1e-4


def test_compare_small(capsys, tmp_path):
    path = tmp_path / "c.csv"
    code, out, _ = run(capsys, "compare", "--n-list", "60,120", "--n-seeds", "2", "--estimators", "dm,oracle", "--out", str(path))
    assert code == 0
    assert path.read_text().splitlines()[0].endswith("schema_version")
    assert "oracle" in out
    assert run(capsys, "compare", "--estimators", "magic")[0] == 2


def test_reruns_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        path = tmp_path / f"r{k}.json"
        assert main(["estimate", "--dgp", "piecewise", "--n", "80", "--eps", "1e-3", "--seed", "3", "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_console_script_and_log_env(tmp_path):
    env = {"GATEAUX_LOG": "info", "PATH": "/usr/local/bin:/usr/bin:/bin"}
    proc = subprocess.run(
        [sys.executable, "-m", "empgateaux.cli", "estimate", "--eps", "1e-3", "--scheme", "central", "--dgp", "discrete-cube"],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0 and "one_step=" in proc.stdout
