import json
import os

import pytest
from hypothesis import given, settings, strategies as st

from paramhom.experiments import SCENARIOS, ConfigError, ExperimentConfig, OutputConflict, run_scenario
from paramhom.experiments.cli import main
from paramhom.experiments.oracles import ORACLES

SMALL_HR = ["discretization.mesh=4"]


def test_every_scenario_has_valid_defaults():
    for name in SCENARIOS:
        cfg = ExperimentConfig.defaults(name).validate()
        assert cfg.scenario == name
        again = ExperimentConfig.from_text(cfg.to_text())
        assert again.values == cfg.values and again.hash() == cfg.hash()


@settings(max_examples=25)
@given(st.integers(1, 64), st.floats(0.05, 0.95), st.lists(st.integers(1, 64), min_size=1, max_size=5),
       st.sampled_from(["b1", "b2"]))
def test_config_text_round_trip(mesh, p, ns, form):
    cfg = ExperimentConfig.defaults("hr").with_overrides(
        [f"discretization.mesh={mesh}", f"gpc.p={p!r}", "gpc.n_list=" + ",".join(map(str, ns)), f"gpc.form={form}"])
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back.values == cfg.values
    assert back.hash() == cfg.hash()


def test_hash_ignores_run_settings_only():
    cfg = ExperimentConfig.defaults("hr")
    assert cfg.with_overrides(["run.threads=4", "run.deterministic=true"]).hash() == cfg.hash()
    assert cfg.with_overrides(["discretization.mesh=6"]).hash() != cfg.hash()


def test_fractions_accepted():
    cfg = ExperimentConfig.defaults("homog-rate").with_overrides(["discretization.eps=1/8, 1/16"])
    assert cfg["discretization.eps"] == [0.125, 0.0625]


@pytest.mark.parametrize("override,key", [
    ("gpc.p=1.5", "gpc.p"),
    ("discretization.mesh=abc", "discretization.mesh"),
    ("discretization.mesh=1000", "discretization.mesh"),
    ("problem.bogus=1", "problem.bogus"),
    ("discretization.eps=1/8", "discretization.eps"),
    ("run.scenario=penalty", "run.scenario"),
    ("gpc.n_list=0", "gpc.n_list"),
])
def test_config_errors_name_the_key(override, key):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.defaults("hr").with_overrides([override]).validate()
    assert info.value.key == key


def test_unknown_section_and_scenario():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_text("[run]\nscenario = hr\n[extra]\na = 1\n")
    assert info.value.key == "extra"
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.defaults("nope")
    assert info.value.key == "run.scenario"


def test_family_specific_validation():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.defaults("displacement").with_overrides(["problem.decay=0.9"]).validate()
    assert info.value.key == "problem.decay"


def test_oracles_pass():
    for name, oracle in ORACLES.items():
        failed = [c for c in oracle() if not c.passed]
        assert not failed, (name, failed)


def test_run_writes_outputs(tmp_path):
    cfg = ExperimentConfig.defaults("hr").with_overrides(SMALL_HR)
    res = run_scenario(cfg, str(tmp_path))
    assert res.passed
    for f in ("hr_rate.csv", "summary.txt", "config.ini", "manifest.json"):
        assert (tmp_path / f).exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.hash() and manifest["status"] == "pass"
    header = (tmp_path / "hr_rate.csv").read_text().splitlines()[0]
    assert header.endswith("config_hash")
    assert ExperimentConfig.from_file(tmp_path / "config.ini").hash() == cfg.hash()


def test_deterministic_runs_are_byte_identical(tmp_path):
    args = ["run", "hr", "--deterministic"] + sum((["--set", s] for s in SMALL_HR), [])
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "hr_rate.csv").read_bytes()
    assert a == (tmp_path / "b" / "hr_rate.csv").read_bytes()
    assert b"\r\n" not in a


def test_overwrite_protection(tmp_path):
    out = str(tmp_path)
    cfg = ExperimentConfig.defaults("hr").with_overrides(SMALL_HR)
    run_scenario(cfg, out)
    run_scenario(cfg, out)  # same config: allowed
    other = cfg.with_overrides(["problem.amplitude=0.1"])
    with pytest.raises(OutputConflict):
        run_scenario(other, out)
    assert main(["run", "hr", "--out", out, "--set", "problem.amplitude=0.1", "--set", SMALL_HR[0]]) == 2
    assert main(["run", "hr", "--out", out, "--set", "problem.amplitude=0.1", "--set", SMALL_HR[0],
                 "--force"]) == 0


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["list-scenarios"]) == 0
    listed = capsys.readouterr().out
    assert all(name in listed for name in SCENARIOS)
    assert main(["run", "nope"]) == 2
    assert main(["run", "hr", "--set", "gpc.p=2"]) == 2
    assert "gpc.p" in capsys.readouterr().err
    # a sweep in the wrong order fails its monotonicity check: exit 1, outputs still written
    code = main(["run", "displacement", "--out", str(tmp_path / "bad"), "--set", "discretization.mesh=4",
                 "--set", "problem.modes=3", "--set", "gpc.n_list=4,1"])
    assert code == 1
    assert "FAIL criterion 5" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "bad" / "manifest.json").read_text())
    assert manifest["status"] == "fail"


def test_validate_and_show_config(tmp_path, capsys):
    assert main(["show-config", "penalty"]) == 0
    text = capsys.readouterr().out
    path = tmp_path / "p.ini"
    path.write_text(text)
    assert main(["validate", "--config", str(path)]) == 0
    assert ExperimentConfig.defaults("penalty").hash() in capsys.readouterr().out
    path.write_text(text.replace("decay = 2.0", "decay = -1.0"))
    assert main(["validate", "--config", str(path)]) == 2
    assert main(["validate", "--config", str(tmp_path / "missing.ini")]) == 2


def test_threads_do_not_change_results(tmp_path):
    base = ExperimentConfig.defaults("hr").with_overrides(SMALL_HR)
    run_scenario(base.with_overrides(["run.deterministic=true"]), str(tmp_path / "a"))
    run_scenario(base.with_overrides(["run.threads=3"]), str(tmp_path / "b"))
    assert (tmp_path / "a" / "hr_rate.csv").read_bytes() == (tmp_path / "b" / "hr_rate.csv").read_bytes()
