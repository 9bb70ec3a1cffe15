import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hybridseek.cli import (
    EXIT_CONFIG,
    EXIT_FLOW_EXIT,
    EXIT_OK,
    ConfigError,
    main,
    parse_config_text,
    parse_value,
    read_arc_csv,
    write_arc_csv,
)
from hybridseek.hybrid_core import arc_from_blocks


def write(path, text):
    path.write_text(text)
    return str(path)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_parse_value_literals():
    assert parse_value("10") == 10
    assert parse_value("1e-3") == 1e-3
    assert parse_value("true") is True and parse_value("Off") is False
    assert parse_value("1, 2.5") == [1, 2.5]
    assert parse_value("[0.5]") == [0.5]
    assert parse_value("bouncing_seeker") == "bouncing_seeker"


def test_parse_config_sections():
    cfg = parse_config_text("""
        # comment
        scenario.name = attack_gradient
        param.eta2 = 0.3
        solver.h = 0.002
        output.arc_csv = false
        sweep.param = eta2
        sweep.values = 0.05, 0.45
        compare.tau = 12
        compare.eps_grid = 0.1, 0.5
    """)
    assert cfg.scenario == "attack_gradient"
    assert cfg.overrides == {"eta2": 0.3}
    assert cfg.solver == {"h": 0.002}
    assert cfg.arc_csv is False
    assert cfg.sweep_param == "eta2" and cfg.sweep_values == [0.05, 0.45]
    assert cfg.tau == 12.0 and cfg.eps_grid == [0.1, 0.5]


@pytest.mark.parametrize("text", [
    "param.x = 1",
    "scenario.name = periodic_reset\nbogus.key = 1",
    "scenario.name = periodic_reset\nsolver.nothing = 1",
    "scenario.name = periodic_reset\nno equals sign",
    "scenario.name = periodic_reset\nparam.a = 1\nparam.a = 2",
    "scenario.name = periodic_reset\nsweep.values = 1, inf",
    "scenario.name = periodic_reset\ncompare.reference = other",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_run_periodic_reset_writes_three_jumps(tmp_path):
    cfg = write(tmp_path / "c.cfg", "scenario.name = periodic_reset\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    table = rows(tmp_path / "o" / "arc.csv")
    assert table[0] == ["t", "j", "timer", "x2"]
    js = [int(r[1]) for r in table[1:]]
    switches = [i for i in range(1, len(js)) if js[i] != js[i - 1]]
    assert len(switches) == 3
    for i in switches:
        # jump rows share the time: (t, j, x_pre) then (t, j + 1, x_post)
        assert table[1 + i][0] == table[i][0]
    meta = json.loads((tmp_path / "o" / "metadata.json").read_text())
    assert meta["termination"] == "HorizonTime" and meta["exit_code"] == 0


def test_unknown_scenario_exits_one(tmp_path):
    cfg = write(tmp_path / "c.cfg", "scenario.name = does_not_exist\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_config_exits_one(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_flow_set_exit_exits_two(tmp_path):
    cfg = write(tmp_path / "c.cfg",
                "scenario.name = rps_nash\nparam.lambda_xi = 0.001\nsolver.T_max = 1\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_FLOW_EXIT


def test_csv_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    arc = arc_from_blocks([np.sort(rng.uniform(0, 1, 7)), [1.0, 1.0 + 1e-13, 2.0 / 3.0 + 1.0]],
                          [rng.normal(size=(7, 3)) * 1e5, rng.normal(size=(3, 3)) * 1e-300])
    write_arc_csv(tmp_path / "a.csv", arc, ("a", "b", "c"))
    back, names = read_arc_csv(tmp_path / "a.csv")
    assert names == ["a", "b", "c"]
    for x, y in zip(arc.times + arc.states, back.times + back.states):
        assert np.array_equal(x, y)


def test_simulated_arc_round_trip(tmp_path):
    cfg = write(tmp_path / "c.cfg", "scenario.name = source_surveillance\nparam.horizon = 3\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "9"]) == EXIT_OK
    arc, _ = read_arc_csv(tmp_path / "o" / "arc.csv")
    write_arc_csv(tmp_path / "again.csv", arc, rows(tmp_path / "o" / "arc.csv")[0][2:])
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "o" / "arc.csv").read_bytes()


def test_reruns_are_byte_identical(tmp_path):
    cfg = write(tmp_path / "c.cfg", "scenario.name = source_surveillance\nparam.horizon = 3\n")
    for d in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / d), "--seed", "4"]) == EXIT_OK
    assert (tmp_path / "a" / "arc.csv").read_bytes() == (tmp_path / "b" / "arc.csv").read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HYBRIDSEEK_OUT", str(tmp_path / "env_out"))
    cfg = write(tmp_path / "c.cfg", "scenario.name = periodic_reset\nparam.horizon = 5\n")
    assert main(["run", "--config", cfg]) == EXIT_OK
    assert (tmp_path / "env_out" / "arc.csv").exists()


def test_empty_sweep_exits_one(tmp_path):
    cfg = write(tmp_path / "c.cfg", "scenario.name = periodic_reset\nsweep.param = period\nsweep.values = []\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_attack_sweep_flags_divergence(tmp_path):
    cfg = write(tmp_path / "c.cfg",
                "scenario.name = attack_gradient\nsweep.param = eta2\nsweep.values = 0.05, 0.45\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o"), "--jobs", "2"]) == EXIT_OK
    table = rows(tmp_path / "o" / "summary.csv")
    assert table[0] == ["index", "value", "termination", "exit_code", "terminal_error", "diverged", "min_eps"]
    assert [r[5] for r in table[1:]] == ["False", "True"]
    assert (tmp_path / "o" / "run_000" / "arc.csv").exists()
    assert (tmp_path / "o" / "run_001" / "metadata.json").exists()


def test_frequency_sweep_min_eps_monotone(tmp_path):
    cfg = write(tmp_path / "c.cfg", "\n".join([
        "scenario.name = bouncing_seeker",
        "sweep.param = frequency",
        "sweep.values = 10, 100, 1000",
        "compare.tau = 20",
        "compare.eps_grid = 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1, 2, 5",
    ]))
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o"), "--jobs", "3"]) == EXIT_OK
    eps = [float(r[6]) for r in rows(tmp_path / "o" / "summary.csv")[1:]]
    assert eps[0] >= eps[1] >= eps[2]


def test_compare_against_counterpart(tmp_path):
    cfg = write(tmp_path / "c.cfg", "\n".join([
        "scenario.name = bouncing_seeker", "param.frequency = 1000",
        "compare.tau = 20", "compare.eps_grid = 0.1, 0.5, 1",
    ]))
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["tau"] == 20.0 and report["min_eps"] == 0.1
    assert report["meta"]["reference"] == "counterpart"


def test_self_compare_gives_first_grid_entry(tmp_path):
    cfg = write(tmp_path / "c.cfg", "\n".join([
        "scenario.name = periodic_reset", "compare.reference = self", "compare.eps_grid = 0.3, 0.6",
    ]))
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    assert json.loads((tmp_path / "o" / "report.json").read_text())["min_eps"] == 0.3


def test_compare_without_counterpart_exits_one(tmp_path):
    cfg = write(tmp_path / "c.cfg", "scenario.name = periodic_reset\n")
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_list_prints_registry_json(capsys):
    assert main(["list"]) == EXIT_OK
    listing = json.loads(capsys.readouterr().out)
    assert len(listing) == 16
    assert all({"name", "params", "has_counterpart"} <= set(e) for e in listing)


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path / "c.cfg", "scenario.name = nope\n")
    res = subprocess.run([sys.executable, "-m", "hybridseek", "run", "--config", cfg],
                         capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == EXIT_CONFIG
    assert "error" in res.stderr
