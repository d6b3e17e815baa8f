"""Command-line runner: ``fracshape <command> --config PATH --out DIR``.

Configs are INI-style ``key = value`` files with sections; unknown sections
or keys are errors. Exit codes: 0 ok, 2 usage/config error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

from . import __version__
from .experiments import DEFAULTS, run_experiment
from .grid import GridError, SetMask, ball_mask, box_mask, load_mask, make_grid
from .kernel import FracParam, KernelError
from .operator import OperatorError, assemble
from .shape import AnnealSchedule, CostSpec, ShapeError, anneal_search, brute_force_min, exchange_search
from .solve import (SolverError, capacity, solve_eigs, solve_torsion, write_solution_csv,
                    write_spectrum_csv)
from .shape import gamma_s_distance

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

SCHEMA = {
    "grid": {"dim", "extent", "cells"},
    "model": {"s"},
    "mask": {"source", "center", "radius", "lower", "upper", "path"},
    "mask_b": {"source", "center", "radius", "lower", "upper", "path"},
    "eigs": {"count"},
    "cost": {"indices", "combiner", "weights", "budget"},
    "optimizer": {"method", "max_iters", "neighbourhood", "t0_fraction", "ratio", "sweeps",
                  "moves_per_sweep", "polish", "init"},
    "experiment": {"cells", "s", "radius", "samples", "length", "budget", "s_list", "gap_tol",
                   "tol", "growth"},
    "run": {"seed", "out", "serial"},
}


class ConfigError(ValueError):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _value(text, like=None):
    """Parse an experiment override shaped like its default: int, float or list of floats."""
    if isinstance(like, list) or "," in text:
        return _floats(text)
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad experiment value {text!r}") from exc


@dataclass
class ExperimentConfig:
    sections: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None
    serial: bool = False

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def require(self, section, key):
        val = self.get(section, key)
        if val is None:
            raise ConfigError(f"missing [{section}] {key}")
        return val

    def num(self, section, key, kind=float, default=None):
        """Typed lookup; ``default=None`` makes the key required."""
        val = self.require(section, key) if default is None else self.get(section, key, default)
        try:
            return kind(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {val!r}") from exc

    def resolved(self) -> dict:
        out = {sec: dict(sorted(kv.items())) for sec, kv in sorted(self.sections.items())}
        out["run"] = {"seed": self.seed, "serial": self.serial}
        return out

    def grid(self):
        dim = self.num("grid", "dim", int)
        ext = [_floats(part) for part in self.require("grid", "extent").split(";")]
        try:
            cells = [int(k) for k in self.require("grid", "cells").lower().split("x")]
        except ValueError as exc:
            raise ConfigError("cells must be an integer or 'AxB'") from exc
        if any(len(e) != 2 for e in ext):
            raise ConfigError("extent must be 'a,b' or 'a1,b1;a2,b2'")
        return make_grid(dim, ext if len(ext) > 1 else ext[0], cells)

    def param(self, grid):
        try:
            return FracParam(self.num("model", "s"), grid.dim)
        except KernelError as exc:
            raise ConfigError(str(exc)) from exc

    def mask(self, grid, section="mask"):
        if section not in self.sections:
            raise ConfigError(f"no mask source: add a [{section}] section")
        src = self.require(section, "source")
        if src == "full":
            return SetMask.full(grid)
        if src == "ball":
            return ball_mask(grid, _floats(self.require(section, "center")),
                             self.num(section, "radius"))
        if src == "box":
            return box_mask(grid, _floats(self.require(section, "lower")),
                            _floats(self.require(section, "upper")))
        if src == "file":
            mask = load_mask(self.require(section, "path"))
            if mask.grid != grid:
                raise ConfigError("mask file grid differs from [grid]")
            return mask
        raise ConfigError(f"unknown mask source {src!r}")

    def cost(self):
        idx = [int(v) for v in _floats(self.require("cost", "indices"))]
        weights = self.get("cost", "weights")
        return CostSpec(
            tuple(idx),
            combiner=self.get("cost", "combiner", "single"),
            budget=self.num("cost", "budget"),
            weights=tuple(_floats(weights)) if weights else None,
        )


def load_config(path, seed=None, serial=False) -> ExperimentConfig:
    sections = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            unknown = set(parser[sec]) - SCHEMA[sec]
            if unknown:
                raise ConfigError(f"unknown keys in [{sec}]: {', '.join(sorted(unknown))}")
            sections[sec] = dict(parser[sec])
    run = sections.pop("run", {})
    try:
        cfg_seed = int(run.get("seed", 0))
    except ValueError as exc:
        raise ConfigError(f"bad seed: {exc}") from exc
    cfg = ExperimentConfig(
        sections,
        seed=cfg_seed if seed is None else seed,
        out=run.get("out"),
        serial=serial or run.get("serial", "false").lower() in ("1", "true", "yes"),
    )
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must fit in 64 unsigned bits")
    return cfg


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _envelope(cfg, command, **payload):
    return {"command": command, "version": __version__, "config": cfg.resolved(), **payload}


def cmd_torsion(cfg, out):
    grid = cfg.grid()
    param = cfg.param(grid)
    mask = cfg.mask(grid)
    sol = solve_torsion(assemble(grid, param, mask))
    write_solution_csv(sol, out / "solution.csv")
    centre = np.array([(a + b) / 2 for a, b in grid.extent])
    d = ((grid.centers() - centre) ** 2).sum(axis=1)
    near = np.flatnonzero(np.isclose(d, d.min(), rtol=1e-9, atol=0))
    _write_json(out / "torsion.json", _envelope(
        cfg, "torsion", residual=sol.residual_norm, max_value=sol.max_value,
        center_value=float(sol.u[near].mean()), measure=mask.measure()))


def cmd_eigs(cfg, out):
    grid = cfg.grid()
    param = cfg.param(grid)
    mask = cfg.mask(grid)
    count = cfg.num("eigs", "count", int, 1)
    if count < 1 or count > mask.count:
        raise ConfigError(f"eigs count {count} exceeds the {mask.count} degrees of freedom")
    res = solve_eigs(assemble(grid, param, mask), count)
    write_spectrum_csv(res, out / "spectrum.csv")
    _write_json(out / "eigs.json", _envelope(
        cfg, "eigs", eigenvalues=res.eigenvalues.tolist(),
        degenerate=[list(p) for p in res.degenerate]))


def cmd_capacity(cfg, out):
    grid = cfg.grid()
    param = cfg.param(grid)
    mask = cfg.mask(grid)
    cap = capacity(grid, param, mask)
    with open(out / "potential.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_index", "x"] + (["y"] if grid.dim == 2 else []) + ["u_value"])
        for i, c in enumerate(grid.centers()):
            w.writerow([i, *(repr(float(v)) for v in c), repr(float(cap.potential[i]))])
    _write_json(out / "capacity.json", _envelope(cfg, "capacity", value=cap.value))


def cmd_gamma(cfg, out):
    grid = cfg.grid()
    param = cfg.param(grid)
    a, b = cfg.mask(grid, "mask"), cfg.mask(grid, "mask_b")
    _write_json(out / "gamma.json", _envelope(cfg, "gamma-dist", distance=gamma_s_distance(grid, param, a, b)))


def cmd_optimize(cfg, out):
    grid = cfg.grid()
    param = cfg.param(grid)
    cost = cfg.cost()
    method = cfg.get("optimizer", "method", "exchange")
    init = None
    if cfg.get("optimizer", "init", "random") == "mask":
        init = cfg.mask(grid)
    if method == "brute":
        res = brute_force_min(cost, grid, param)
        res.seed = cfg.seed
    elif method == "exchange":
        res = exchange_search(cost, grid, param, init, max_iters=cfg.num("optimizer", "max_iters", int, 1000),
                              seed=cfg.seed, neighbourhood=cfg.get("optimizer", "neighbourhood"))
    elif method == "anneal":
        mps = cfg.get("optimizer", "moves_per_sweep")
        sched = AnnealSchedule(
            t0_fraction=cfg.num("optimizer", "t0_fraction", float, 0.1),
            ratio=cfg.num("optimizer", "ratio", float, 0.95),
            sweeps=cfg.num("optimizer", "sweeps", int, 50),
            moves_per_sweep=cfg.num("optimizer", "moves_per_sweep", int) if mps else None,
            polish=cfg.get("optimizer", "polish", "true").lower() in ("1", "true", "yes"),
        )
        res = anneal_search(cost, grid, param, init, sched, seed=cfg.seed)
    else:
        raise ConfigError(f"unknown optimizer {method!r}")
    res.export(out, "opt")
    summary = json.loads((out / "opt.json").read_text())
    _write_json(out / "opt.json", _envelope(cfg, "optimize", **summary))


def cmd_experiment(name, cfg, out):
    if name not in DEFAULTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(DEFAULTS)}")
    defaults = DEFAULTS[name]
    overrides = {k: _value(v, defaults.get(k)) for k, v in cfg.sections.get("experiment", {}).items()}
    try:
        report = run_experiment(name, overrides, seed=cfg.seed)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    _write_json(out / f"{name}.json", report)
    return report


COMMANDS = {
    "torsion": cmd_torsion,
    "eigs": cmd_eigs,
    "capacity": cmd_capacity,
    "gamma-dist": cmd_gamma,
    "optimize": cmd_optimize,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="fracshape", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fracshape {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "experiment"]:
        p = sub.add_parser(name)
        if name == "experiment":
            p.add_argument("name", help=", ".join(DEFAULTS))
        p.add_argument("--config", help="INI-style config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="overrides [run] seed")
        p.add_argument("--serial", action="store_true", help="reproducibility mode (single thread)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, seed=args.seed, serial=args.serial)
        out = Path(args.out or cfg.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "experiment":
            report = cmd_experiment(args.name, cfg, out)
            print(f"{args.name}: {'pass' if report['pass'] else 'FAIL'}")
        else:
            COMMANDS[args.command](cfg, out)
    except (ConfigError, GridError, ShapeError, OperatorError, KernelError) as exc:
        print(f"fracshape: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, LinAlgError, FloatingPointError) as exc:
        print(f"fracshape: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
