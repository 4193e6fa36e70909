import json
from fractions import Fraction

import pytest

from mikado_forge import harness
from mikado_forge.field import SpectralField


def test_parse_config_keys_comments_lists():
    text = """
    # surrogate point
    n = 128        # grid
    sigma = 2
    ell_inv = 16/1
    mikado_mu = 4, 8, 16
    suites = params, geom
    tol_residual = 1e-6
    """
    cfg = harness.parse_config(text)
    assert cfg.n == 128 and cfg.sigma == 2
    assert cfg.ell_inv == Fraction(16)
    assert cfg.mikado_mu == (4, 8, 16)
    assert cfg.suites == ("params", "geom")
    assert cfg.tol_residual == 1e-6


def test_config_roundtrip():
    cfg = harness.RunConfig(n=96, mu=6, seed=11)
    back = harness.parse_config(harness.format_config(cfg))
    assert back == cfg


@pytest.mark.parametrize("text", ["n 64", "unknown_key = 1", "n = sixty", "ell_inv = 1/0"])
def test_parse_config_errors(text):
    with pytest.raises(harness.ConfigError):
        harness.parse_config(text)


def test_validate_refuses_underresolved_grid():
    cfg = harness.RunConfig(n=32, sigma=2, mu=4)
    with pytest.raises(harness.ConfigError, match="8\\*sigma\\*mu"):
        cfg.validate()
    with pytest.raises(harness.ConfigError):
        harness.RunConfig(suites=("params", "bogus")).validate()
    with pytest.raises(harness.ConfigError):
        harness.RunConfig(tol_residual=0.0).validate()


def test_run_suite_refuses_before_writing(tmp_path):
    out = tmp_path / "run"
    cfg = harness.RunConfig(n=32, out=str(out))
    with pytest.raises(harness.ConfigError):
        harness.run_suite(cfg, ["params"])
    assert not out.exists()


def test_params_suite_allocates_no_fields(tmp_path, monkeypatch):
    made = []
    orig = SpectralField.__post_init__

    def counting(self):
        made.append(self.grid.n)
        orig(self)

    monkeypatch.setattr(SpectralField, "__post_init__", counting)
    cfg = harness.RunConfig(out=str(tmp_path))
    status, diag = harness.run_suite(cfg, ["params"], golden={})
    assert made == []
    assert status == 0 and diag.records
    assert {r.suite for r in diag.records} == {"params"}


def test_diagnostics_jsonl(tmp_path):
    cfg = harness.RunConfig(out=str(tmp_path))
    status, diag = harness.run_suite(cfg, ["params", "geom"], golden={})
    lines = (tmp_path / "diagnostics.jsonl").read_text().splitlines()
    assert len(lines) == len(diag.records)
    for line in lines:
        rec = json.loads(line)
        assert set(rec) == {"suite", "check", "value", "threshold", "passed", "wall_time"}
        assert rec["suite"] in ("params", "geom")
    assert (tmp_path / "config.txt").exists()
    measured = json.loads((tmp_path / "golden_measured.json").read_text())
    assert measured["fingerprint"] == cfg.fingerprint()
    assert "geom.r0" in measured["values"]
    assert status == 0


def test_golden_comparison_band():
    cfg = harness.RunConfig()
    golden = {"fingerprint": cfg.fingerprint(), "values": {"x": 1.0}}
    d = harness.Diagnostics(None, golden, cfg)
    d.golden_value("x", 1.15)
    d.golden_value("x", 1.25)
    assert [r.passed for r in d.records] == [True, False]
    # a different configuration does not compare
    other = harness.Diagnostics(None, golden, harness.RunConfig(seed=3))
    other.golden_value("x", 5.0)
    assert other.records == []


def test_sweep_mu_output(tmp_path):
    cfg = harness.RunConfig(out=str(tmp_path))
    out = tmp_path / "sweep.jsonl"
    res = harness.estimate_sweep(cfg, "mu", [4, 8, 16], out)
    lines = [json.loads(x) for x in out.read_text().splitlines()]
    assert [r["mu"] for r in lines[:3]] == [4, 8, 16]
    assert lines[-1]["slopes"] == res["slopes"]
    # thin pipes only separate at larger mu; the -1 trend is checked on 8, 16, 32
    assert res["slopes"]["w_p_L1"] < -0.3
    assert abs(res["slopes"]["w_p_L2"]) < 0.2
    assert all(k in res["slopes"] for k in ("w_p_L1_per_sqrt_delta", "w_p_L2_per_sqrt_delta"))


def test_sweep_rejects_short_ladder_and_unknown():
    cfg = harness.RunConfig()
    with pytest.raises(harness.ConfigError):
        harness.estimate_sweep(cfg, "mu", [4, 8])
    with pytest.raises(harness.ConfigError):
        harness.estimate_sweep(cfg, "tau", [1, 2, 3])
