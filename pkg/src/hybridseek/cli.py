"""Command-line runner: list scenarios, run one, sweep a parameter, compare against a counterpart.

Configs are flat ``key = value`` files with dotted keys::

    scenario.name = bouncing_seeker
    param.frequency = 100
    solver.T_max = 20
    sweep.param = frequency
    sweep.values = 10, 100, 1000
    compare.tau = 20
    compare.eps_grid = 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1, 2

Values are Python literals (numbers, tuples, true/false); anything else is a string.
"""

from __future__ import annotations

import argparse
import ast
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .closeness import min_epsilon
from .hybrid_core import (
    HybridArc,
    HybridError,
    SolverConfig,
    Termination,
    arc_from_blocks,
    simulate,
)
from .scenarios import (
    NoCounterpart,
    build_scenario,
    counterpart,
    list_scenarios,
    scenario_metrics,
)

OUT_ENV = "HYBRIDSEEK_OUT"
DEFAULT_OUT = "hybridseek_out"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FLOW_EXIT = 2
EXIT_NO_DYNAMICS = 3

_EXIT_FOR = {
    Termination.HORIZON_TIME: EXIT_OK,
    Termination.HORIZON_JUMPS: EXIT_OK,
    Termination.FLOW_SET_EXIT: EXIT_FLOW_EXIT,
    Termination.NO_DYNAMICS: EXIT_NO_DYNAMICS,
}

_SOLVER_FIELDS = set(SolverConfig.__dataclass_fields__)
_DEFAULT_GRID = (1e-3, 2e-3, 5e-3, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- config

@dataclass
class RunConfig:
    scenario: str
    overrides: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    out: Optional[str] = None
    arc_csv: bool = True
    report_json: bool = True
    sweep_param: Optional[str] = None
    sweep_values: Optional[list] = None
    tau: Optional[float] = None
    eps_grid: Optional[list] = None
    reference: str = "counterpart"


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        value = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if "," in text and not text.startswith("["):
            return [parse_value(part) for part in text.split(",")]
        try:
            # literal_eval rejects inf and nan; they must still read as numbers to be refused later
            return float(text)
        except ValueError:
            return text
    if isinstance(value, (list, tuple)):
        return list(value)
    return value


def parse_config_text(text: str) -> RunConfig:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        entries[key] = parse_value(value)
    return config_from_entries(entries)


def _as_list(key, value) -> list:
    return value if isinstance(value, list) else [value]


def config_from_entries(entries: dict) -> RunConfig:
    name = entries.get("scenario.name")
    if not isinstance(name, str) or not name:
        raise ConfigError("scenario.name is required")
    cfg = RunConfig(name)
    for key, value in entries.items():
        head, _, tail = key.partition(".")
        if key == "scenario.name":
            continue
        if head == "param" and tail:
            cfg.overrides[tail] = value
        elif head == "solver" and tail in _SOLVER_FIELDS:
            cfg.solver[tail] = value
        elif key == "output.dir":
            cfg.out = str(value)
        elif key == "output.arc_csv":
            cfg.arc_csv = bool(value)
        elif key == "output.report_json":
            cfg.report_json = bool(value)
        elif key == "sweep.param":
            cfg.sweep_param = str(value)
        elif key == "sweep.values":
            cfg.sweep_values = _as_list(key, value)
        elif key == "compare.tau":
            cfg.tau = float(value)
        elif key == "compare.eps_grid":
            cfg.eps_grid = [float(v) for v in _as_list(key, value)]
        elif key == "compare.reference":
            if value not in ("counterpart", "self"):
                raise ConfigError("compare.reference must be 'counterpart' or 'self'")
            cfg.reference = value
        else:
            raise ConfigError(f"unknown key {key}")
    if cfg.sweep_values is not None:
        for v in cfg.sweep_values:
            if isinstance(v, (int, float)) and not math.isfinite(v):
                raise ConfigError("sweep values must be finite")
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config_text(text)


# ---------------------------------------------------------------- arc CSV

def _fmt(v: float) -> str:
    return "%.17g" % v


def write_arc_csv(path, arc: HybridArc, names=()) -> None:
    """Rows (t, j, x...); a jump shows up as (t, j, x_pre) followed by (t, j + 1, x_post)."""
    names = list(names) if names and len(names) == arc.dim else [f"x{i}" for i in range(arc.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "j", *names])
        for j, (t, x) in enumerate(zip(arc.times, arc.states)):
            for ti, xi in zip(t, x):
                w.writerow([_fmt(ti), j, *map(_fmt, xi)])


def read_arc_csv(path) -> tuple[HybridArc, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["t", "j"]:
        raise ConfigError(f"{path} is not an arc CSV")
    names = rows[0][2:]
    times: list[list[float]] = []
    states: list[list[list[float]]] = []
    for row in rows[1:]:
        j = int(row[1])
        while len(times) <= j:
            times.append([])
            states.append([])
        times[j].append(float(row[0]))
        states[j].append([float(v) for v in row[2:]])
    return arc_from_blocks(times, states), names


# ---------------------------------------------------------------- running

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if hasattr(v, "value") and isinstance(getattr(v, "value"), str):
        return v.value
    return v


def _solve(cfg: RunConfig, seed: Optional[int]):
    built = build_scenario(cfg.scenario, cfg.overrides)
    solver = dict(cfg.solver)
    if seed is not None:
        solver["rng_seed"] = seed
    config = built.config.replace(**solver) if solver else built.config
    return built, config, simulate(built.system, built.x0, config)


def _compare(cfg: RunConfig, built, arc: HybridArc) -> dict:
    tau = cfg.tau if cfg.tau is not None else float(arc.times[-1][-1]) + arc.n_jumps
    grid = cfg.eps_grid or list(_DEFAULT_GRID)
    if cfg.reference == "self":
        report = min_epsilon(arc, arc, tau, grid)
    else:
        cp = counterpart(cfg.scenario, cfg.overrides)
        report = min_epsilon(arc, cp.arc, tau, grid, cp.coords, cp.reference_coords)
    out = report.to_dict()
    out["meta"] = {"scenario": cfg.scenario, "reference": cfg.reference,
                   "overrides": _jsonable(cfg.overrides)}
    return out


def execute(cfg: RunConfig, out_dir, seed: Optional[int] = None, compare: bool = False) -> dict:
    """Run one configuration and write its files; returns a summary with the exit code."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    built, config, sol = _solve(cfg, seed)
    arc = sol.arc
    summary = {
        "scenario": cfg.scenario,
        "overrides": _jsonable(cfg.overrides),
        "solver": _jsonable({f: getattr(config, f) for f in sorted(_SOLVER_FIELDS)}),
        "termination": sol.termination.value,
        "exit_code": _EXIT_FOR[sol.termination],
        "metrics": _jsonable(scenario_metrics(cfg.scenario, arc, built.metadata)),
        "metadata": _jsonable(built.metadata),
        "state_names": list(built.system.state_names()),
    }
    if cfg.arc_csv:
        write_arc_csv(out_dir / "arc.csv", arc, built.system.state_names())
    if compare:
        report = _compare(cfg, built, arc)
        summary["min_eps"] = report["min_eps"]
        if cfg.report_json:
            (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    (out_dir / "metadata.json").write_text(json.dumps(summary, indent=2))
    return summary


def _sweep_one(args):
    cfg, value, out_dir, seed, compare = args
    key = cfg.sweep_param
    run_cfg = RunConfig(**{**cfg.__dict__, "overrides": dict(cfg.overrides), "solver": dict(cfg.solver)})
    if key.startswith("solver."):
        run_cfg.solver[key.split(".", 1)[1]] = value
    else:
        run_cfg.overrides[key] = value
    try:
        return execute(run_cfg, out_dir, seed, compare)
    except HybridError as exc:
        return {"exit_code": EXIT_CONFIG, "termination": "error", "error": str(exc), "metrics": {}}


def sweep(cfg: RunConfig, out_dir, jobs: int = 1, seed: Optional[int] = None) -> int:
    if not cfg.sweep_param or not cfg.sweep_values:
        raise ConfigError("sweep needs sweep.param and a non-empty sweep.values")
    key = cfg.sweep_param
    if key.startswith("solver.") and key.split(".", 1)[1] not in _SOLVER_FIELDS:
        raise ConfigError(f"unknown solver field {key}")
    # check the names before spending time on runs
    if not key.startswith("solver."):
        build_scenario(cfg.scenario, {**cfg.overrides, key: cfg.sweep_values[0]})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    compare = cfg.tau is not None or cfg.eps_grid is not None
    tasks = [(cfg, v, out_dir / f"run_{i:03d}", seed, compare) for i, v in enumerate(cfg.sweep_values)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "value", "termination", "exit_code", "terminal_error", "diverged", "min_eps"])
        for i, (value, res) in enumerate(zip(cfg.sweep_values, results)):
            m = res.get("metrics", {})
            w.writerow([i, json.dumps(_jsonable(value)), res["termination"], res["exit_code"],
                        m.get("terminal_error", ""), m.get("diverged", ""), res.get("min_eps", "")])
    return max(r["exit_code"] for r in results)


# ---------------------------------------------------------------- entry point

def _out_dir(args, cfg: Optional[RunConfig]) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.out:
        return Path(cfg.out)
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridseek", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="print the scenario registry as JSON")
    for name, text in (("run", "simulate one scenario"), ("sweep", "simulate one run per sweep value"),
                       ("compare", "closeness report against the counterpart arc")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--seed", type=int, help="solver rng seed")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        print(json.dumps(list_scenarios(), indent=2))
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        out = _out_dir(args, cfg)
        if args.command == "run":
            code = execute(cfg, out, args.seed)["exit_code"]
        elif args.command == "compare":
            code = execute(cfg, out, args.seed, compare=True)["exit_code"]
        else:
            if args.jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            code = sweep(cfg, out, args.jobs, args.seed)
    except NoCounterpart as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, HybridError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
