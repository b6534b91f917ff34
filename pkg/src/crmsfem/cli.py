"""Command-line driver: reference solve, single MsFEM solve, convergence sweep.

Configuration comes from an optional TOML file; command-line flags override
individual fields. Exit status is 0 on success, 2 for invalid input and 1
when a solve fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import linsys
from .basis import BasisError, audit_basis, compute_basis_set
from .coarse_solver import apply_coarse_bc, assemble_coarse, solve_coarse
from .fine_solver import DEFAULT_THETA, FineProblem, InconsistentBC, StokesField, solve_reference
from .geometry import DomainSpec, ObstacleSet, PackingFailure, PenalizedCoefficients, generate_obstacles
from .mesh import NestingError, build_coarse, build_fine, check_nesting
from .postproc import error_norms, reconstruct, write_convergence_csv, write_field_csv, write_fine_field, \
    write_vtk
from .scenarios import PRESETS, Scenario, boundary_for, build_scenario

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("crmsfem")

DEFAULT_FINE = (160, 320)
DEFAULT_SWEEP = ((2, 4), (4, 8), (8, 16), (16, 32))


class ConfigError(ValueError):
    pass


def parse_shape(text: str) -> tuple[int, int]:
    """``"8x16"`` -> ``(8, 16)``; also accepts the multiplication sign."""
    m = re.fullmatch(r"\s*(\d+)\s*[x×X]\s*(\d+)\s*", str(text))
    if not m:
        raise ConfigError(f"bad resolution {text!r}, expected AxB")
    a, b = int(m.group(1)), int(m.group(2))
    if a < 1 or b < 1:
        raise ConfigError(f"resolution {text!r} must be positive")
    return a, b


def parse_sweep(value) -> tuple[tuple[int, int], ...]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(parse_shape(v) for v in value)


def shape_label(shape) -> str:
    return f"{shape[0]}x{shape[1]}"


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "cavity49"
    fine: tuple[int, int] = DEFAULT_FINE
    sweep: tuple[tuple[int, int], ...] = DEFAULT_SWEEP
    theta: float = DEFAULT_THETA
    seed: int | None = None
    out: Path = Path("out")
    jobs: int = 1
    coarse_form: str = "penalized"
    # explicit scenario, used when ``scenario`` is not a preset name
    flow: str | None = None
    domain: tuple[float, float, float, float] | None = None
    obstacles_file: Path | None = None
    obstacle_count: int = 0
    epsilon: float = 0.0
    margin: float = 0.0

    def validate(self) -> "RunConfig":
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ConfigError("theta must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.coarse_form not in ("penalized", "fluid"):
            raise ConfigError(f"coarse_form must be 'penalized' or 'fluid', got {self.coarse_form!r}")
        if self.scenario not in PRESETS and self.flow is None:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {sorted(PRESETS)} "
                              "or give an explicit flow/domain")
        my, mx = self.fine
        for ny, nx in self.sweep:
            if my % ny or mx % nx:
                raise ConfigError(f"coarse {ny}x{nx} does not divide fine {my}x{mx}")
        return self

    def build_scenario(self) -> Scenario:
        if self.scenario in PRESETS and self.flow is None:
            sc = build_scenario(self.scenario, self.seed)
        else:
            domain = DomainSpec(*self.domain) if self.domain else PRESETS[
                "cavity0" if self.flow == "cavity" else "poiseuille"].domain
            seed = 0 if self.seed is None else self.seed
            if self.obstacles_file:
                obs = ObstacleSet.from_json(Path(self.obstacles_file).read_text())
            elif self.obstacle_count:
                obs = generate_obstacles(self.obstacle_count, self.epsilon, domain, self.margin, seed)
            else:
                obs = ObstacleSet()
            obs.check_inside(domain)
            sc = Scenario(self.scenario, domain, boundary_for(self.flow, domain), obs, seed)
        return sc


_KEYS = {f for f in RunConfig.__dataclass_fields__}


def load_config(path) -> dict:
    """Read a TOML file into ``RunConfig`` keyword arguments."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    out = {}
    for key, val in raw.items():
        key = key.replace("-", "_")
        if key == "coarse":
            key = "sweep"
        if key not in _KEYS:
            raise ConfigError(f"{path}: unknown key {key!r}")
        out[key] = val
    return _coerce(out)


def _coerce(d: dict) -> dict:
    d = dict(d)
    if "fine" in d:
        d["fine"] = parse_shape(d["fine"]) if isinstance(d["fine"], str) else tuple(d["fine"])
    if "sweep" in d:
        d["sweep"] = parse_sweep(d["sweep"])
    for k in ("out", "obstacles_file"):
        if d.get(k) is not None:
            d[k] = Path(d[k])
    if d.get("domain") is not None:
        d["domain"] = tuple(float(v) for v in d["domain"])
    return d


@dataclass
class RunResult:
    files: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)  # config label -> message
    stages: Counter = field(default_factory=Counter)
    reference: StokesField | None = None


@contextmanager
def _stage(result: RunResult, name: str):
    t0 = time.perf_counter()
    yield
    result.stages[name] += 1
    log.info("%-12s %8.2f s", name, time.perf_counter() - t0)


def _fine_problem(cfg: RunConfig, sc: Scenario):
    grid = build_fine(sc.domain, *cfg.fine)
    return FineProblem(grid, sc.obstacles, PenalizedCoefficients(grid.h), sc.preset, theta=cfg.theta)


def _reference(cfg: RunConfig, sc: Scenario, result: RunResult) -> StokesField:
    with _stage(result, "reference"):
        ref = solve_reference(_fine_problem(cfg, sc))
    result.reference = ref
    return ref


def _msfem(cfg: RunConfig, sc: Scenario, shape, result: RunResult):
    problem = _fine_problem(cfg, sc)
    coarse = build_coarse(sc.domain, *shape)
    check_nesting(coarse, problem.grid)
    with _stage(result, "basis"):
        bset = compute_basis_set(coarse, problem.grid, sc.obstacles, problem.coeffs, cfg.theta, cfg.jobs)
    with _stage(result, "coarse"):
        system = assemble_coarse(bset, form=cfg.coarse_form)
        sol = solve_coarse(apply_coarse_bc(system, coarse, sc.preset), coarse)
    with _stage(result, "reconstruct"):
        field_ = reconstruct(sol, bset)
    return bset, sol, field_


def run_reference(cfg: RunConfig) -> RunResult:
    cfg.validate()
    sc = cfg.build_scenario()
    result = RunResult()
    ref = _reference(cfg, sc, result)
    result.files += write_fine_field(ref, cfg.out, sc.name, "reference")
    return result


def run_msfem(cfg: RunConfig, shape) -> RunResult:
    cfg = replace(cfg, sweep=(tuple(shape),)).validate()
    sc = cfg.build_scenario()
    result = RunResult()
    _, sol, field_ = _msfem(cfg, sc, shape, result)
    label = shape_label(shape)
    result.files += write_fine_field(field_, cfg.out, sc.name, label)
    path = Path(cfg.out) / f"{sc.name}_{label}_coarse.json"
    path.write_text(sol.to_json() + "\n")
    result.files.append(path)
    return result


def run_sweep(cfg: RunConfig, write_fields: bool = False) -> RunResult:
    """Solve the reference once, then score every sweep entry against it.

    A failing entry is recorded in ``failures`` and the sweep moves on.
    """
    cfg.validate()
    sc = cfg.build_scenario()
    result = RunResult()
    ref = _reference(cfg, sc, result)
    for shape in cfg.sweep:
        label = shape_label(shape)
        try:
            _, _, field_ = _msfem(cfg, sc, shape, result)
            with _stage(result, "errors"):
                report = error_norms(field_, ref, sc.obstacles)
        except (BasisError, linsys.LinearSolveError, InconsistentBC) as exc:
            log.error("sweep entry %s failed: %s", label, exc)
            result.failures[label] = str(exc)
            continue
        # table label in the "ny x nx" style of the convergence tables
        result.reports.append(replace(report, config=label))
        log.info("%s: L2 %.4g  H1 %.4g  P %.4g", label, report.l2_rel, report.h1_rel, report.l2_p_rel)
        if write_fields:
            result.files += write_fine_field(field_, cfg.out, sc.name, label)
    result.files.append(write_convergence_csv(result.reports, Path(cfg.out) / f"{sc.name}_convergence.csv"))
    if result.failures:
        path = Path(cfg.out) / f"{sc.name}_failures.json"
        path.write_text(json.dumps(result.failures, indent=1, sort_keys=True) + "\n")
        result.files.append(path)
    return result


def run_basis_dump(cfg: RunConfig, shape, edges=None) -> RunResult:
    """Write basis functions of selected edges as full-grid fields plus an audit summary."""
    cfg = replace(cfg, sweep=(tuple(shape),)).validate()
    sc = cfg.build_scenario()
    result = RunResult()
    problem = _fine_problem(cfg, sc)
    grid = problem.grid
    coarse = build_coarse(sc.domain, *shape)
    check_nesting(coarse, grid)
    with _stage(result, "basis"):
        bset = compute_basis_set(coarse, grid, sc.obstacles, problem.coeffs, cfg.theta, cfg.jobs)
    label = shape_label(shape)
    edges = range(coarse.n_edges) if edges is None else edges
    for edge in edges:
        if not 0 <= edge < coarse.n_edges:
            raise ConfigError(f"edge {edge} out of range 0..{coarse.n_edges - 1}")
        for comp, cname in enumerate("xy"):
            bf = bset.function(edge, comp)
            u = np.zeros((grid.n_nodes, 2))
            p = np.zeros(grid.n_nodes)
            cnt = np.zeros(grid.n_nodes)
            for piece in bf.pieces:
                nm = piece.sub.node_map
                u[nm] += piece.velocity
                p[nm] += piece.pressure
                cnt[nm] += 1
            hit = cnt > 0
            u[hit] /= cnt[hit, None]
            p[hit] /= cnt[hit]
            stem = Path(cfg.out) / f"{sc.name}_{label}_basis-e{edge}-{cname}"
            dims = (grid.mx + 1, grid.my + 1)
            origin = (grid.x_nodes[0], grid.y_nodes[0])
            result.files.append(write_vtk(f"{stem}.vtk", dims, origin, (grid.hx, grid.hy), "phi", u))
            result.files.append(write_field_csv(grid, u, p, f"{stem}.csv"))
    audit = audit_basis(bset)
    summary = {
        "provenance": bset.provenance,
        "max_constraint_residual": max(audit.constraint.values()),
        "max_pressure_mean_residual": max(audit.pressure_mean.values()),
        "max_divergence_deviation": max(audit.divergence.values()),
        "flagged": [list(k) for k in audit.flagged],
    }
    path = Path(cfg.out) / f"{sc.name}_{label}_basis_audit.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    result.files.append(path)
    return result


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--scenario", help=f"preset name: {', '.join(sorted(PRESETS))}")
    common.add_argument("--fine", help="fine resolution MYxMX")
    common.add_argument("--coarse", help="coarse resolution(s) NYxNX[,NYxNX...]")
    common.add_argument("--theta", type=float, help="pressure stabilization parameter")
    common.add_argument("--seed", type=int, help="obstacle placement seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes for basis computation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="crmsfem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("reference", parents=[common], help="fine-grid reference solve")
    sub.add_parser("msfem", parents=[common], help="single multiscale solve")
    p = sub.add_parser("sweep", parents=[common], help="convergence study against the reference")
    p.add_argument("--write-fields", action="store_true", help="also write every MsFEM field")
    p = sub.add_parser("basis-dump", parents=[common], help="write basis functions and an audit summary")
    p.add_argument("--edges", help="comma-separated edge ids (default: all)")
    return parser


def config_from_args(args) -> RunConfig:
    kw = load_config(args.config) if args.config else {}
    flags = {"scenario": args.scenario, "fine": args.fine, "sweep": args.coarse, "theta": args.theta,
             "seed": args.seed, "out": args.out, "jobs": args.jobs}
    kw.update(_coerce({k: v for k, v in flags.items() if v is not None}))
    return RunConfig(**kw)


def _single_shape(cfg: RunConfig) -> tuple[int, int]:
    if len(cfg.sweep) != 1:
        raise ConfigError("this command takes exactly one --coarse resolution")
    return cfg.sweep[0]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "reference":
            result = run_reference(cfg)
        elif args.command == "msfem":
            result = run_msfem(cfg, _single_shape(cfg))
        elif args.command == "sweep":
            result = run_sweep(cfg, write_fields=args.write_fields)
        else:
            edges = [int(e) for e in args.edges.split(",")] if args.edges else None
            result = run_basis_dump(cfg, _single_shape(cfg), edges)
    except (ConfigError, NestingError, PackingFailure, InconsistentBC, OSError, TypeError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BasisError, linsys.LinearSolveError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    for path in result.files:
        print(path)
    if result.failures:
        for label, msg in sorted(result.failures.items()):
            print(f"solver failure in {label}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
