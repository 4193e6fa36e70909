import json

import pytest

from mikado_forge.cli import build_parser, main

COMMANDS = ("params-check", "check-operators", "decompose", "build-mikado", "step", "verify",
            "sweep", "run-all")


def test_all_subcommands_exist():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(COMMANDS) <= set(sub.choices)


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_params_check(capsys):
    assert main(["params-check"]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert lines and all(x["holds"] for x in lines)


def test_decompose(capsys):
    assert main(["decompose", "--matrix", "1,0.02,0,1,0,1"]) == 0
    rep = _last_json(capsys)
    assert rep["reconstruction_residual"] < 1e-12
    assert len(rep["gamma_squared"]) == 9
    assert main(["decompose", "--matrix", "3,0,0,1,0,1"]) == 1
    assert "distance" in _last_json(capsys)
    assert main(["decompose", "--matrix", "1,2"]) == 2


def test_check_operators(capsys):
    assert main(["check-operators", "--n", "8"]) == 0
    assert _last_json(capsys)["passed"]


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n = 32\nsigma = 2\nmu = 4\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o"), "run-all"]) == 2
    assert "config error" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    assert main(["--config", str(tmp_path / "missing.cfg"), "run-all"]) == 2


def test_run_all_params_suite(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["--out", str(out), "run-all", "--suite", "params"]) == 0
    assert _last_json(capsys)["failed"] == []
    assert (out / "diagnostics.jsonl").exists()


def test_build_mikado(tmp_path, capsys):
    out = tmp_path / "mk"
    assert main(["--out", str(out), "build-mikado", "--mu", "4", "--sigma", "1", "--n", "32"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["directions"]) == 9
    assert len(list(out.glob("W_*.mkf"))) == 9


@pytest.mark.slow
def test_step_then_verify(tmp_path, capsys):
    out = tmp_path / "t1"
    assert main(["--out", str(out), "step"]) == 0
    rep = _last_json(capsys)
    assert rep["residual_relative"] <= 1e-7
    assert main(["verify", "--in", str(out)]) == 0
    assert _last_json(capsys)["certified"]


def test_sweep_sigma(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "sweep", "--parameter", "sigma",
                 "--ladder", "2,4,8"]) == 0
    rep = _last_json(capsys)
    assert rep["slopes"]["antidiv_L1"] <= -0.85
    assert (tmp_path / "sweep_sigma.jsonl").exists()
