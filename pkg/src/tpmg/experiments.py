"""Experiment configuration and the solve pipeline shared by the CLI and tests."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from tpmg import perf
from tpmg.fem import assemble_all
from tpmg.grid import build_hierarchy
from tpmg.krylov import KrylovConfig, SolveReport, gmres
from tpmg.mgprec import MGConfig, build_preconditioner
from tpmg.system import PhysicsParams, build_rhs, eliminate_buoyancy, reconstruct_buoyancy


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    nx: int = 64
    ny: int = 64
    nz: int = 32
    Lx: float = 5.76e6
    Ly: float = 5.76e6
    H: float = 1.0e4


@dataclass
class PhysicsConfig:
    c: float = 300.0
    N: float = 0.01
    nu_cfl: float = 8.0


@dataclass
class SolverConfig:
    preconditioner: str = "mg"
    n_single: int = 2
    mg: MGConfig = field(default_factory=MGConfig)
    krylov: KrylovConfig = field(default_factory=KrylovConfig)


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: str = "results"
    seed: int = 0
    rhs: str = "timestep"

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(value, kind, name):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    raise TypeError(kind)


_TYPES = {"int": int, "float": float, "str": str, "Optional[int]": int}


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object, got {data!r}")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{prefix}{key}: unknown field")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        full = f"{prefix}{name}"
        value = data[name]
        sub = {"grid": GridConfig, "physics": PhysicsConfig, "solver": SolverConfig,
               "mg": MGConfig, "krylov": KrylovConfig}.get(name)
        if sub is not None:
            kwargs[name] = _build(sub, value, full + ".")
        elif f.type == "Optional[int]" and value is None:
            kwargs[name] = None
        else:
            kwargs[name] = _coerce(value, _TYPES[f.type], full)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc


def parse_config(data: dict | str) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a JSON document or dict; defaults fill gaps."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
    cfg = _build(ExperimentConfig, data, "")
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def validate(cfg: ExperimentConfig) -> None:
    g, p, s = cfg.grid, cfg.physics, cfg.solver
    for name in ("nx", "ny", "nz"):
        if getattr(g, name) < 1:
            raise ConfigError(f"grid.{name}: must be >= 1")
    for name in ("Lx", "Ly", "H"):
        if not getattr(g, name) > 0:
            raise ConfigError(f"grid.{name}: must be positive")
    if not p.nu_cfl > 0:
        raise ConfigError(f"physics.nu_cfl: must be positive, got {p.nu_cfl}")
    if not p.c > 0:
        raise ConfigError("physics.c: must be positive")
    if not p.N >= 0:
        raise ConfigError("physics.N: must be non-negative")
    if s.preconditioner not in ("mg", "single", "none"):
        raise ConfigError(f"solver.preconditioner: expected mg, single or none, got {s.preconditioner!r}")
    if cfg.rhs not in ("timestep", "random"):
        raise ConfigError(f"rhs: expected 'timestep' or 'random', got {cfg.rhs!r}")


def initial_state(ops, kind: str = "timestep", seed: int = 0):
    """(u0, p0, b0) for the right-hand side.

    ``timestep``: zero velocity and buoyancy, a horizontally Gaussian pressure
    perturbation with a half-sine vertical profile.  ``random``: Gaussian
    noise everywhere.
    """
    grid, lay = ops.grid, ops.layouts
    if kind == "random":
        rng = np.random.default_rng(seed)
        return (rng.standard_normal(lay.n_velocity), rng.standard_normal(lay.W3.size),
                rng.standard_normal(lay.Wb.size))
    x, y, z = grid.cell_centres()
    x0, y0 = 0.5 * grid.Lx, 0.5 * grid.Ly
    width = 0.1 * min(grid.Lx, grid.Ly)
    r2 = ((x - x0) ** 2 + (y - y0) ** 2) / width ** 2
    p0 = np.exp(-r2) * np.sin(np.pi * z / grid.H)
    return np.zeros(lay.n_velocity), p0, np.zeros(lay.Wb.size)


@dataclass
class SolveResult:
    report: SolveReport
    U: np.ndarray
    P: np.ndarray
    B: np.ndarray
    params: PhysicsParams
    level_counters: list
    mixed_counters: perf.KernelCounters
    n_levels: int

    def perf_dict(self, machine: perf.MachineModel | None = None) -> dict:
        kernels = perf.KernelCounters()
        kernels.merge(self.mixed_counters)
        levels = []
        for n, c in enumerate(self.level_counters):
            kernels.merge(c)
            levels.append({"level": n, "kernels": c.to_dict()})
        out = {"kernels": kernels.to_dict(), "levels": levels,
               "solve": self.report.to_dict(), "n_levels": self.n_levels}
        if machine is not None:
            out["machine"] = {"R_peak": machine.R_peak, "BW_peak": machine.BW_peak,
                              "sizeof_scalar": machine.sizeof_scalar,
                              "sizeof_index": machine.sizeof_index}
        return out


def run_solve(cfg: ExperimentConfig) -> SolveResult:
    g, ph, s = cfg.grid, cfg.physics, cfg.solver
    t0 = time.perf_counter()
    dx = g.Lx / g.nx
    params = PhysicsParams.from_courant(ph.nu_cfl, dx, c=ph.c, N=ph.N)
    n_levels = s.mg.resolve_levels(g.nx, g.ny, ph.nu_cfl) if s.preconditioner == "mg" else 1
    hierarchy = build_hierarchy(g.nx, g.ny, g.nz, g.Lx, g.Ly, g.H, n_levels)
    ops = assemble_all(hierarchy.finest)
    mixed_counters = perf.KernelCounters()
    u0, p0, b0 = initial_state(ops, cfg.rhs, cfg.seed)
    rhs3 = build_rhs(ops, params, u0, p0, b0)
    op, rhs = eliminate_buoyancy(ops, params, rhs3, mixed_counters)
    bundle = build_preconditioner(s.preconditioner, op, hierarchy, s.mg, s.n_single)
    t_setup = time.perf_counter() - t0
    # counters only cover the iteration phase
    for lvl in bundle.levels:
        lvl.counters.reset()
    mixed_counters.reset()
    x, report = gmres(op.apply, rhs, bundle.apply, s.krylov)
    report.t_setup = t_setup
    U, P = op.split(x)
    B = reconstruct_buoyancy(ops, params, U, rhs3[2])
    report.counters = mixed_counters.to_dict()
    return SolveResult(report, U, P, B, params, [lvl.counters for lvl in bundle.levels],
                       mixed_counters, n_levels)
