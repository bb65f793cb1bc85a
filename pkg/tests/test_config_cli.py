import json

import numpy as np
import pytest
import yaml

from spsgf.cli import main, read_trajectory_csv
from spsgf.config import ConfigError, PRESETS, build, load_config, resolve, validate


def _messages(cfg):
    return [str(v) for v in validate(cfg)]


def _write(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def _short_run(tmp_path, algorithm="sp-sgf", horizon=0.5, every=10, name="cfg.yaml", **extra):
    cfg = {"problem": {"family": "resource_allocation"}, "algorithm": algorithm,
           "integrator": {"scheme": "explicit-euler", "dt": 1e-3, "horizon": horizon, "record_every": every},
           "initial": {"preset": "paper-example"}, "output": {"dir": str(tmp_path / "out")}}
    cfg.update(extra)
    return _write(tmp_path / name, cfg)


def test_preset_validates_cleanly():
    assert validate(resolve(None, "paper-example")) == []


def test_tau_must_be_positive():
    cfg = resolve(None, "paper-example", {"params": {"tau": 0}})
    assert "params.tau must be > 0" in _messages(cfg)


def test_field_level_messages():
    cfg = resolve(None, "paper-example", {"params": {"alpha": -1.0, "epsilon": "x"},
                                          "integrator": {"scheme": "leapfrog"}, "bogus": 1})
    msgs = _messages(cfg)
    assert "params.alpha must be > 0" in msgs
    assert "params.epsilon must be > 0" in msgs
    assert any(m.startswith("integrator.scheme") for m in msgs)
    assert "bogus: unknown setting" in msgs


def test_integrator_grid_checks():
    cfg = resolve(None, "paper-example", {"integrator": {"horizon": 1.0005}})
    assert "integrator.horizon must be a multiple of dt" in _messages(cfg)
    cfg = resolve(None, "paper-example", {"integrator": {"horizon": 1.0, "record_every": 300}})
    assert "integrator.record_every must divide the number of steps" in _messages(cfg)


def test_infeasible_start_is_a_warning():
    x0 = np.zeros((13, 2)).tolist()
    cfg = resolve(None, "paper-example", {"initial": {"preset": None, "x": x0}})
    cfg["initial"] = {"x": x0}
    vs = validate(cfg)
    assert len(vs) == 1 and vs[0].severity == "warning"
    assert "anytime" in vs[0].message and str(vs[0]).startswith("warning:")
    build(cfg)  # warnings do not block


def test_infeasible_start_is_fine_for_sp():
    x0 = np.zeros((13, 2)).tolist()
    cfg = resolve(None, "paper-example", {"algorithm": "sp"})
    cfg["initial"] = {"x": x0}
    assert validate(cfg) == []


def test_validate_never_raises():
    assert validate("nonsense")
    assert validate({"problem": 3})
    cfg = resolve(None, "paper-example")
    cfg["problem"] = {"family": "unknown-family"}
    assert any(m.startswith("problem") for m in _messages(cfg))


def test_build_rejects_invalid():
    with pytest.raises(ConfigError, match="tau"):
        build(resolve(None, "paper-example", {"params": {"tau": -1}}))


def test_defaults_initialize_all_blocks():
    cfg = resolve(None, "paper-example")
    cfg["initial"] = {"x": np.ones((13, 2)).tolist()}
    sim = build(cfg)
    np.testing.assert_array_equal(sim.initial.v, sim.initial.x)
    for blk in (sim.initial.y, sim.initial.z, sim.initial.lam, sim.initial.mu):
        assert blk.shape == (13, 1) and not blk.any()


def test_example_preset_starts_virtual_at_zero():
    sim = build(resolve(None, "paper-example"))
    assert not sim.initial.v.any()
    assert sim.params.tau == 1.0 and sim.params.epsilon == 1e-4 and sim.params.alpha == 1.0


def test_include_by_path(tmp_path):
    (tmp_path / "shared").mkdir()
    _write(tmp_path / "shared" / "problem.yaml", {"family": "resource_allocation", "budget": 5.0})
    _write(tmp_path / "cfg.yaml", {"problem": {"include": "shared/problem.yaml", "budget": 4.0},
                                   "params": {"tau": 2.0}})
    raw = load_config(tmp_path / "cfg.yaml")
    assert raw["problem"] == {"family": "resource_allocation", "budget": 4.0}
    cfg = resolve(raw, "paper-example")
    assert cfg["params"] == {"tau": 2.0, "epsilon": 1e-4, "alpha": 1.0}


def test_include_cycle_and_missing(tmp_path):
    _write(tmp_path / "a.yaml", {"include": "b.yaml"})
    _write(tmp_path / "b.yaml", {"include": "a.yaml"})
    with pytest.raises(ConfigError, match="cycle"):
        load_config(tmp_path / "a.yaml")
    _write(tmp_path / "c.yaml", {"problem": {"include": "nope.yaml"}})
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "c.yaml")


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        resolve(None, "fig-9")
    assert "paper-example" in PRESETS


# command line


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", "--preset", "paper-example"]) == 0
    assert "config OK" in capsys.readouterr().out
    assert main(["validate", "--preset", "paper-example", "--tau", "0"]) == 2
    assert "params.tau must be > 0" in capsys.readouterr().err
    assert main(["validate"]) == 2


def test_cli_run_artifacts(tmp_path, capsys):
    cfg = _short_run(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["rows"] == manifest["expected_rows"] == int(round(0.5 / (1e-3 * 10))) + 1
    assert not manifest["truncated"] and manifest["wall_time_s"] > 0
    lo, hi = manifest["observed_bounds"]["lambda"]
    assert 0.0 <= lo <= hi
    header = (out / "trajectory.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t" and header[1] == "x[0][0]"
    assert header[-4:] == ["g[0]", "h[0]", "snorm", "obj"]
    # n = 2, p = q = 1: 2n + 2p + 2q state columns per agent
    state = [c for c in header if c.split("[")[0] in ("x", "v", "y", "z", "lambda", "mu")]
    assert len(state) == 13 * (2 * 2 + 2 * 1 + 2 * 1)
    times, cols = read_trajectory_csv(out / "trajectory.csv")
    assert times.size == manifest["rows"] and cols["x"].shape == (times.size, 13, 2)
    assert (out / "diagnostics.csv").exists()


@pytest.mark.parametrize("every", [1, 25])
def test_row_count_contract(tmp_path, every):
    cfg = _short_run(tmp_path, horizon=0.1, every=every)
    assert main(["run", "--config", str(cfg)]) == 0
    lines = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()
    assert len(lines) - 1 == round(0.1 / (1e-3 * every)) + 1


def test_manifest_round_trip_bit_identical(tmp_path):
    cfg = _short_run(tmp_path, horizon=0.3)
    assert main(["run", "--config", str(cfg)]) == 0
    first = tmp_path / "out"
    again = tmp_path / "again"
    assert main(["run", "--config", str(first / "manifest.json"), "--out", str(again)]) == 0
    for name in ("trajectory.csv", "diagnostics.csv"):
        assert (first / name).read_bytes() == (again / name).read_bytes()


def test_cli_overrides_reach_manifest(tmp_path):
    cfg = _short_run(tmp_path, horizon=0.2)
    assert main(["run", "--config", str(cfg), "--tau", "0.5", "--epsilon", "1e-3", "--algorithm", "sp"]) == 0
    m = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert m["config"]["params"]["tau"] == 0.5 and m["config"]["params"]["epsilon"] == 1e-3
    assert m["config"]["algorithm"] == "sp"


def test_cli_check_on_runs(tmp_path, capsys):
    good = _short_run(tmp_path, horizon=1.0, name="a.yaml", output={"dir": str(tmp_path / "a")})
    bad = _short_run(tmp_path, algorithm="sp", horizon=1.0, name="b.yaml", output={"dir": str(tmp_path / "b")})
    assert main(["run", "--config", str(good)]) == 0
    assert main(["run", "--config", str(bad)]) == 0
    capsys.readouterr()
    assert main(["check", "--run", str(tmp_path / "a"), "--checks", "anytime"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("PASS") and "max_ineq_violation" in out
    assert main(["check", "--run", str(tmp_path / "b"), "--checks", "anytime"]) == 1
    out = capsys.readouterr().out
    assert out.startswith("FAIL") and "first_violation_time" in out
    report = json.loads((tmp_path / "b" / "report.json").read_text())
    assert report[0]["check"] == "anytime" and report[0]["first_violation_time"] is not None


def test_cli_check_convergence_fields(tmp_path, capsys):
    cfg = _short_run(tmp_path, horizon=0.2)
    assert main(["run", "--config", str(cfg)]) == 0
    capsys.readouterr()
    main(["check", "--run", str(tmp_path / "out"), "--checks", "convergence", "oracle", "licq"])
    out = capsys.readouterr().out.splitlines()
    assert "final_distance" in out[0] and "settle_time" in out[0]
    assert out[1].startswith("PASS") and out[2].startswith("PASS")


def test_cli_check_missing_artifacts(tmp_path, capsys):
    assert main(["check", "--run", str(tmp_path / "missing")]) == 2
    assert "missing" in capsys.readouterr().err


def test_cli_sweep(tmp_path, capsys):
    cfg = _short_run(tmp_path, horizon=0.2)
    assert main(["sweep", "--config", str(cfg), "--taus", "0.5", "2", "--algorithms", "sp-sgf", "sp-cm"]) == 0
    summary = json.loads((tmp_path / "out" / "sweep.json").read_text())
    assert len(summary) == 4
    d = tmp_path / "out" / "sp-sgf" / "tau_0.5"
    head = (d / "squares.csv").read_text().splitlines()[0]
    assert head == "t,sum_sq_x[0],sum_sq_x[1]"
    assert (d / "constraints.csv").read_text().startswith("t,g[0],h[0]")
    m = json.loads((d / "manifest.json").read_text())
    assert m["config"]["params"]["tau"] == 0.5


def test_cli_run_truncation_flagged(tmp_path):
    # a huge step makes the explicit scheme blow up
    cfg = _short_run(tmp_path, algorithm="sp", horizon=1000.0, every=1)
    raw = yaml.safe_load(cfg.read_text())
    raw["integrator"]["dt"] = 10.0
    _write(cfg, raw)
    assert main(["run", "--config", str(cfg)]) == 3
    m = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert m["truncated"] and m["error"] and m["rows"] < m["expected_rows"]
