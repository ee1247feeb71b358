import json
import os
import subprocess
import sys

import pytest

from semirte import cli, config

FORWARD = {"kind": "forward", "grid": {"h": 0.125}, "quadrature": {"nv": 8},
           "coefficients": {"sigma_a": [0.5, 0.5], "sigma_s": 1.0}, "source": 1.0}


def _write(tmp_path, spec, name="spec.json"):
    path = tmp_path / name
    path.write_text(spec if isinstance(spec, str) else json.dumps(spec))
    return str(path)


def _digests(run_dir):
    return json.loads(open(os.path.join(run_dir, "manifest.json")).read())["outputs"]


def test_forward_smoke(tmp_path, capsys):
    spec = _write(tmp_path, FORWARD)
    out = tmp_path / "runs"
    assert cli.main(["forward", "--spec", spec, "--out", str(out), "--quiet"]) == 0
    (run_dir,) = out.iterdir()
    names = set(os.listdir(run_dir))
    assert {"u.csv", "mean.csv", "H.csv", "manifest.json"} <= names
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["kind"] == "forward" and manifest["config"]["grid"]["h"] == 0.125
    assert set(manifest["timings"]) and all(v >= 0 for v in manifest["timings"].values())
    assert capsys.readouterr().out == ""


def test_determinism(tmp_path):
    spec = _write(tmp_path, FORWARD)
    a = cli.run(config.load_spec(spec), "forward", str(tmp_path / "a"))
    b = cli.run(config.load_spec(spec), "forward", str(tmp_path / "b"))
    assert os.path.basename(a["run_dir"]) == os.path.basename(b["run_dir"])
    assert _digests(a["run_dir"]) == _digests(b["run_dir"])


def test_negative_epsilon_rejected_without_run_dir(tmp_path, capsys):
    spec = dict(FORWARD, kind="diffusion-limit-scan", epsilons=[0.2, -0.1],
                coefficients={"sigma_a": [1.0], "sigma_s": 1.0})
    out = tmp_path / "runs"
    assert cli.main(["diffusion-limit-scan", "--spec", _write(tmp_path, spec),
                     "--out", str(out)]) == 2
    assert not out.exists()
    assert "epsilons/1" in capsys.readouterr().err


def test_validate_messages(tmp_path, capsys):
    assert cli.main(["validate", "--spec", _write(tmp_path, FORWARD)]) == 0
    assert config.diagnose(FORWARD) == []

    missing = dict(FORWARD, coefficients={"sigma_s": 1.0})
    assert cli.main(["validate", "--spec", _write(tmp_path, missing)]) == 2
    assert "σ_{a,0} > 0" in capsys.readouterr().err

    zero = dict(FORWARD, coefficients={"sigma_a": [0.0]})
    assert any("σ_{a,0} > 0" in m for m in config.diagnose(zero))

    unordered = dict(FORWARD, kind="invert", source=[1.0, 0.5])
    assert any("monotone-source requirement" in m for m in config.diagnose(unordered))


def test_unknown_key_rejected():
    diags = config.diagnose(dict(FORWARD, colour="blue"))
    assert diags and "colour" in diags[0]
    diags = config.diagnose(dict(FORWARD, grid={"h": 0.1, "hx": 0.1}))
    assert diags and "hx" in diags[0]


def test_parse_error_has_line_and_column(tmp_path, capsys):
    bad = _write(tmp_path, '{\n  "kind": "forward",\n  "source": 1.0,,\n}')
    assert cli.main(["validate", "--spec", bad]) == 2
    err = capsys.readouterr().err
    assert "line 3 column" in err


def test_kind_mismatch(tmp_path):
    with pytest.raises(config.ValidationError):
        cli.run(dict(FORWARD), "diffusion", str(tmp_path))


def test_spectral_scan_rows_and_slope(tmp_path):
    spec = {"kind": "spectral-scan", "grid": {"h": 0.125}, "quadrature": {"nv": 8},
            "coefficients": {"sigma_a": [1.0], "sigma_s": 1.0}, "source": 1.0,
            "epsilons": [0.4, 0.3, 0.2, 0.1]}
    m = cli.run(spec, "spectral-scan", str(tmp_path))
    lines = open(os.path.join(m["run_dir"], "scan.csv")).read().splitlines()
    assert lines[0] == "epsilon,one_minus_rho,lambda_eps_over_eps,mu,slope_cum"
    assert len(lines) == 5
    assert "slope" in m["results"]
    assert os.path.exists(os.path.join(m["run_dir"], "scan.gp"))


def test_iteration_failure_exit_code_and_partial_outputs(tmp_path, capsys):
    spec = dict(FORWARD, tolerances={"tol_fp": 1e-14, "max_iter": 1})
    out = tmp_path / "runs"
    assert cli.main(["forward", "--spec", _write(tmp_path, spec), "--out", str(out)]) == 3
    assert "error in stage" in capsys.readouterr().err
    (run_dir,) = out.iterdir()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["error"]["type"] == "IterationError"


def test_invert_with_synthetic_data(tmp_path):
    spec = {"kind": "invert", "grid": {"h": 0.125}, "quadrature": {"nv": 8},
            "coefficients": {"sigma_a": [1.0, 0.5], "sigma_s": 1.0}, "source": [0.5, 1.0]}
    m = cli.run(spec, "invert", str(tmp_path))
    assert os.path.exists(os.path.join(m["run_dir"], "sigma_a_1.csv"))


def test_module_entry_point(tmp_path):
    spec = _write(tmp_path, FORWARD)
    proc = subprocess.run([sys.executable, "-m", "semirte.cli", "validate", "--spec", spec],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "ok"


def test_threads_flag(tmp_path):
    spec = _write(tmp_path, FORWARD)
    assert cli.main(["forward", "--spec", spec, "--out", str(tmp_path / "r"), "--threads", "1",
                     "--quiet"]) == 0
