"""Command-line experiment driver.

Exit codes: 0 converged, 2 not converged (or a sweep entry failed), 1 usage
or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from tpmg import perf
from tpmg.experiments import (ConfigError, ExperimentConfig, GridConfig, load_config,
                              parse_config, run_solve)
from tpmg.mgprec import MGConfig

log = logging.getLogger("tpmg")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2


def _machine_block(measure: bool) -> dict:
    bw = perf.measure_stream_triad() if measure else None
    return {"R_peak": None, "BW_peak": bw, "sizeof_scalar": perf.SIZEOF_DOUBLE,
            "sizeof_index": perf.SIZEOF_INT}


def cmd_solve(cfg: ExperimentConfig, out: Path, measure_stream: bool = True) -> int:
    out.mkdir(parents=True, exist_ok=True)
    result = run_solve(cfg)
    rep = result.report
    doc = result.perf_dict()
    doc["machine"] = _machine_block(measure_stream)
    doc["config"] = cfg.to_dict()
    (out / "report.json").write_text(json.dumps(doc, indent=2))
    (out / "history.csv").write_text(rep.history_csv())
    log.info("%s: n_iter=%d converged=%s t_setup=%.3fs t_solve=%.3fs",
             cfg.solver.preconditioner, rep.iterations, rep.converged, rep.t_setup, rep.wall_time)
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def _with_precon(cfg: ExperimentConfig, precon: str) -> ExperimentConfig:
    return replace(cfg, solver=replace(cfg.solver, preconditioner=precon))


def cmd_sweep_courant(cfg: ExperimentConfig, nus, precons, out: Path) -> int:
    for nu in nus:
        if not nu > 0:
            raise ConfigError(f"nu: Courant numbers must be positive (dt > 0), got {nu}")
    mg = cfg.solver.mg
    if mg.n_levels is None:
        # the level count stays fixed across the sweep
        mg = replace(mg, n_levels=mg.resolve_levels(cfg.grid.nx, cfg.grid.ny, cfg.physics.nu_cfl))
    base = replace(cfg, solver=replace(cfg.solver, mg=mg))
    rows, status = [], EXIT_OK
    for precon in precons:
        for nu in nus:
            run = _with_precon(replace(base, physics=replace(base.physics, nu_cfl=float(nu))), precon)
            t0 = time.perf_counter()
            try:
                res = run_solve(run)
                niter = res.report.iterations
                t_total = res.report.t_setup + res.report.wall_time
                if not res.report.converged:
                    status = EXIT_NOT_CONVERGED
            except Exception as exc:  # recorded, the sweep continues
                log.error("nu=%g precon=%s failed: %s", nu, precon, exc)
                niter, t_total, status = -1, time.perf_counter() - t0, EXIT_NOT_CONVERGED
            log.info("nu=%g precon=%s n_iter=%d", nu, precon, niter)
            rows.append((nu, niter, t_total, precon))
    _write_csv(out / "courant.csv", ("nu", "niter", "t_total", "precon"), rows)
    return status


def cmd_sweep_resolution(cfg: ExperimentConfig, nxs, precons, out: Path) -> int:
    g = cfg.grid
    rows, status = [], EXIT_OK
    for precon in precons:
        for nx in nxs:
            ny = max(1, (nx * g.ny) // g.nx)
            run = _with_precon(replace(cfg, grid=replace(g, nx=nx, ny=ny)), precon)
            try:
                res = run_solve(run)
                niter = res.report.iterations
                if not res.report.converged:
                    status = EXIT_NOT_CONVERGED
            except ValueError as exc:
                log.error("nx=%d precon=%s rejected: %s", nx, precon, exc)
                niter, status = -1, EXIT_NOT_CONVERGED
            log.info("nx=%d precon=%s n_iter=%d", nx, precon, niter)
            rows.append((nx, niter, precon))
    _write_csv(out / "resolution.csv", ("nx", "niter", "precon"), rows)
    return status


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


LEVEL_COLUMNS = ("level", "total", "Hh", "Hz", "Hz_inv", "all_H")


def level_breakdown(doc: dict) -> list:
    """Rows (level, total, t(Hh), t(Hz), t(Hz^-1), all-H) in seconds.

    The three operator columns are the mean time of a single application;
    ``all_H`` is the summed time of every application on the level.
    """
    rows = []
    for entry in doc.get("levels", []):
        k = perf.KernelCounters.from_dict(entry.get("kernels", {}))

        def single(tag):
            s = k[tag]
            return s.seconds / s.calls if s.calls else 0.0

        all_h = sum(k[t].seconds for t in (perf.HH_APPLY, perf.HZ_APPLY, perf.HZ_SOLVE))
        rows.append((entry["level"], k[perf.LEVEL_TOTAL].seconds, single(perf.HH_APPLY),
                     single(perf.HZ_APPLY), single(perf.HZ_SOLVE), all_h))
    return rows


def format_report(doc: dict) -> str:
    if not isinstance(doc, dict) or not isinstance(doc.get("kernels", {}), dict) \
            or not isinstance(doc.get("levels", []), list):
        raise ConfigError("report: expected an object with 'kernels' and 'levels'")
    lines = []
    solve = doc.get("solve", {})
    if solve:
        lines.append(f"n_iter={solve.get('n_iter')} converged={solve.get('converged')} "
                     f"t_total={solve.get('t_total', 0):.4f}s t_setup={solve.get('t_setup', 0):.4f}s "
                     f"t_iter={solve.get('t_iter', 0):.4f}s")
        lines.append("")
    lines.append("{:>5} {:>10} {:>10} {:>10} {:>10} {:>10}".format(*LEVEL_COLUMNS))
    try:
        rows = level_breakdown(doc)
    except (KeyError, TypeError, AttributeError, ValueError) as exc:
        raise ConfigError(f"report: malformed level entry ({exc!r})") from exc
    for r in rows:
        lines.append("{:>5d} {:>10.4f} {:>10.6f} {:>10.6f} {:>10.6f} {:>10.4f}".format(*r))
    tot = [sum(r[i] for r in rows) for i in range(1, 6)]
    lines.append("{:>5} {:>10.4f} {:>10.6f} {:>10.6f} {:>10.6f} {:>10.4f}".format("total", *tot))
    lines.append("")
    lines.append(f"{'kernel':<12} {'calls':>8} {'bytes_model':>14} {'seconds':>10} {'useful GB/s':>12}")
    for tag, s in sorted(doc.get("kernels", {}).items()):
        lines.append(f"{tag:<12} {int(s.get('calls', 0)):>8d} {s.get('bytes_model', 0):>14.4g} "
                     f"{s.get('seconds', 0):>10.4f} {s.get('useful_bw', 0) / 1e9:>12.2f}")
    machine = doc.get("machine") or {}
    if machine.get("BW_peak"):
        lines.append("")
        lines.append(f"STREAM triad: {machine['BW_peak'] / 1e9:.2f} GB/s")
    return "\n".join(lines)


def cmd_report(path: Path) -> str:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from exc
    return format_report(doc)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tpmg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON experiment configuration")
        sp.add_argument("--out", type=Path, help="output directory (default: config 'output')")

    s = sub.add_parser("solve", help="run one solve and write report.json + history.csv")
    common(s)
    s.add_argument("--no-stream", action="store_true", help="skip the STREAM triad measurement")
    s = sub.add_parser("sweep-courant", help="iterations vs Courant number")
    common(s)
    s.add_argument("--nu", type=float, nargs="+", default=[2, 4, 8, 16, 32])
    s.add_argument("--precon", nargs="+", default=["mg", "single"])
    s = sub.add_parser("sweep-resolution", help="iterations vs horizontal resolution")
    common(s)
    s.add_argument("--nx", type=int, nargs="+", default=[32, 64, 128])
    s.add_argument("--precon", nargs="+", default=["mg", "single"])
    s = sub.add_parser("report", help="summarise a report.json")
    s.add_argument("report", type=Path)
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; 2 is reserved for non-convergence here
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            print(cmd_report(args.report))
            return EXIT_OK
        cfg = load_config(args.config) if args.config else parse_config({})
        out = args.out if args.out is not None else Path(cfg.output)
        if args.command == "solve":
            return cmd_solve(cfg, out, not args.no_stream)
        for precon in args.precon:
            if precon not in ("mg", "single", "none"):
                raise ConfigError(f"precon: unknown preconditioner {precon!r}")
        if args.command == "sweep-courant":
            return cmd_sweep_courant(cfg, args.nu, args.precon, out)
        return cmd_sweep_resolution(cfg, args.nx, args.precon, out)
    except ConfigError as exc:
        print(f"tpmg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"tpmg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
