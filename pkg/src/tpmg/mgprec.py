"""Schur-complement preconditioner with a tensor-product multigrid pressure solve.

The pressure Schur complement is approximated with lumped velocity masses,

    H^ = M3 + wc^2 (Dh Mh_inv Dh^T + 1/(1 + wN^2) Dz Mz_inv Dz^T),

and split as ``H^ = H^_h + H^_z`` into couplings between columns (CSR) and a
column-local banded part that also carries the within-column share of the
horizontal term.  ``H^_z`` is inverted exactly per column and used as a
damped block-Jacobi (vertical line relaxation) smoother inside a V-cycle
that coarsens horizontally only.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from tpmg import perf
from tpmg.banded import (BandPattern, BandedMatrix, ThomasFactors, add, lu_factor, matmul,
                         transpose)
from tpmg.fem import DiscreteOperators, assemble_all
from tpmg.grid import ExtrudedGrid, GridHierarchy, levels_for_courant
from tpmg.system import MixedOperator2x2, PhysicsParams


@dataclass(frozen=True)
class MGConfig:
    n_levels: Optional[int] = None
    n_pre: int = 1
    n_post: int = 1
    n_coarse: int = 2
    omega: float = 0.8
    coarse_solve: str = "smoother"

    def __post_init__(self):
        if self.n_levels is not None and self.n_levels < 1:
            raise ValueError(f"n_levels must be >= 1, got {self.n_levels}")
        for name in ("n_pre", "n_post", "n_coarse"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.omega < 2.0:
            raise ValueError(f"omega must lie in (0, 2), got {self.omega!r}")
        if self.coarse_solve not in ("smoother", "exact"):
            raise ValueError(f"coarse_solve must be 'smoother' or 'exact', got {self.coarse_solve!r}")

    def resolve_levels(self, nx: int, ny: int, nu_cfl: float) -> int:
        return self.n_levels if self.n_levels is not None else levels_for_courant(nx, ny, nu_cfl)


def _within_column_split(L: sp.csr_matrix, nz: int):
    """Split a W3 x W3 matrix into (within-column banded part, between-column CSR part)."""
    L = L.tocoo()
    same = (L.row // nz) == (L.col // nz)
    n_columns = L.shape[0] // nz
    rows, cols, vals = L.row[same], L.col[same], L.data[same]
    dk = (rows % nz) - (cols % nz)
    gm = int(max(0, -dk.min())) if dk.size else 0
    gp = int(max(0, dk.max())) if dk.size else 0
    pat = BandPattern(1, 1, gm, gp, nz, nz)
    inner = BandedMatrix.zeros(pat, n_columns)
    r = rows % nz
    jm = pat.j_m(r)
    np.add.at(inner.data, (rows // nz, r, (cols % nz) - jm), vals)
    outer = sp.csr_matrix((L.data[~same], (L.row[~same], L.col[~same])), shape=L.shape)
    return inner, outer


class HelmholtzLevel:
    """The approximate Helmholtz operator on one grid, split for line relaxation."""

    def __init__(self, grid: ExtrudedGrid, params: PhysicsParams, omega: float = 0.8,
                 ops: DiscreteOperators | None = None, counters: perf.KernelCounters | None = None):
        self.grid = grid
        self.params = params
        self.omega = omega
        self.ops = ops if ops is not None else assemble_all(grid)
        self.counters = counters if counters is not None else perf.KernelCounters()
        ops = self.ops
        nz, nc = grid.nz, grid.n_columns
        wc2 = params.omega_c ** 2
        vfac = wc2 / (1.0 + params.omega_N ** 2)

        horizontal = (ops.Dh @ sp.diags(ops.M2h_inv) @ ops.Dh.T).tocsr()
        self.Delta_h, between = _within_column_split(horizontal, nz)
        self.Hh = (wc2 * between).tocsr()
        self.Hh.sort_indices()

        Mz_inv = BandedMatrix.from_diagonal(ops.M2z_inv.reshape(nc, ops.layouts.W2z.dofs_per_column))
        vertical = matmul(matmul(ops.Dz, Mz_inv), transpose(ops.Dz))
        self.Hz = add(add(ops.M3, self.Delta_h, 1.0, wc2), vertical, 1.0, vfac)
        if self.Hz.pattern.is_tridiagonal:
            self.Hz_inverse = ThomasFactors(self.Hz)
            self._solve_bytes = perf.bytes_tridiagonal_solve(nz) * nc
            self._solve_flops = perf.flops_tridiagonal_solve(nz) * nc
        else:
            self.Hz_inverse = lu_factor(self.Hz)
            self._solve_bytes = perf.bytes_banded_lu_solve(nz, self.Hz.pattern.bandwidth) * nc
            self._solve_flops = 2 * nz * (3 * self.Hz.pattern.bandwidth) * nc
        bw = self.Hz.pattern.bandwidth
        self._hz_bytes = perf.bytes_banded_apply(nz, bw) * nc
        self._hz_flops = perf.flops_banded_apply(nz, bw) * nc
        self._hh_bytes = perf.bytes_csr_apply(self.Hh.shape[0], self.Hh.nnz)
        self._hh_flops = perf.flops_csr_apply(self.Hh.nnz)

    @property
    def size(self) -> int:
        return self.grid.n_cells

    @cached_property
    def H_assembled(self) -> sp.csr_matrix:
        """H^ assembled directly from its definition, independent of the split."""
        ops, p = self.ops, self.params
        wc2 = p.omega_c ** 2
        H = (ops.M3.to_sparse()
             + wc2 * (ops.Dh @ sp.diags(ops.M2h_inv) @ ops.Dh.T)
             + wc2 / (1.0 + p.omega_N ** 2) * (ops.Dz_sparse @ sp.diags(ops.M2z_inv) @ ops.Dz_sparse.T))
        return H.tocsr()

    def apply_Hh(self, x: np.ndarray) -> np.ndarray:
        t0 = time.perf_counter()
        y = self.Hh @ x
        self.counters.record(perf.HH_APPLY, self._hh_bytes, self._hh_flops, time.perf_counter() - t0)
        return y

    def apply_Hz(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        t0 = time.perf_counter()
        y = self.Hz.apply(x, out)
        self.counters.record(perf.HZ_APPLY, self._hz_bytes, self._hz_flops, time.perf_counter() - t0)
        return y

    def solve_Hz(self, r: np.ndarray) -> np.ndarray:
        t0 = time.perf_counter()
        x = self.Hz_inverse.solve(r)
        self.counters.record(perf.HZ_SOLVE, self._solve_bytes, self._solve_flops,
                             time.perf_counter() - t0)
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.apply_Hh(x) + self.apply_Hz(x)

    def residual(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        return b - self.apply_Hh(x) - self.apply_Hz(x)

    def smooth(self, x: np.ndarray | None, b: np.ndarray, n_steps: int) -> np.ndarray:
        """``n_steps`` sweeps of x <- x + omega Hz^-1 (b - H x); ``x=None`` means zero."""
        t0 = time.perf_counter()
        for step in range(n_steps):
            if x is None:
                x = self.omega * self.solve_Hz(b)
            else:
                x = x + self.omega * self.solve_Hz(self.residual(x, b))
        if x is None:
            x = np.zeros_like(b)
        self.counters.record(perf.SMOOTHER, 0, 0, time.perf_counter() - t0, calls=n_steps)
        return x


def smooth(level: HelmholtzLevel, x, b, n_steps: int):
    return level.smooth(x, b, n_steps)


def _check_transfer(fine: ExtrudedGrid, coarse_size: int | None, fine_size: int | None):
    if fine.nx % 2 or fine.ny % 2:
        raise ValueError(f"grid {fine.nx}x{fine.ny} has no coarser level")
    n_coarse = fine.n_cells // 4
    if coarse_size is not None and coarse_size != n_coarse:
        raise ValueError(f"coarse vector has {coarse_size} entries, expected {n_coarse}")
    if fine_size is not None and fine_size != fine.n_cells:
        raise ValueError(f"fine vector has {fine_size} entries, expected {fine.n_cells}")


def restrict_residual(fine: ExtrudedGrid, r: np.ndarray) -> np.ndarray:
    """Sum of the four child cells: the transpose of DG0 injection."""
    _check_transfer(fine, None, r.size)
    nxc, nyc = fine.nx // 2, fine.ny // 2
    return r.reshape(nyc, 2, nxc, 2, fine.nz).sum(axis=(1, 3)).reshape(-1)


def prolong_correction(fine: ExtrudedGrid, x: np.ndarray) -> np.ndarray:
    """Natural embedding of a coarse DG0 field: each child takes its parent's value."""
    _check_transfer(fine, x.size, None)
    nxc, nyc = fine.nx // 2, fine.ny // 2
    xc = x.reshape(nyc, 1, nxc, 1, fine.nz)
    return np.broadcast_to(xc, (nyc, 2, nxc, 2, fine.nz)).reshape(-1)


def build_levels(hierarchy: GridHierarchy, params: PhysicsParams, cfg: MGConfig = MGConfig(),
                 ops_fine: DiscreteOperators | None = None) -> list:
    """Rediscretised Helmholtz operators on every level, coarsest first."""
    levels = []
    for n, grid in enumerate(hierarchy.levels):
        ops = ops_fine if (n == len(hierarchy) - 1 and ops_fine is not None) else None
        levels.append(HelmholtzLevel(grid, params, cfg.omega, ops=ops))
    return levels


class MultigridSolver:
    """One V-cycle from a zero initial guess approximates H^-1 b."""

    def __init__(self, levels: list, cfg: MGConfig = MGConfig()):
        if not levels:
            raise ValueError("need at least one level")
        self.levels = levels
        self.cfg = cfg
        self._coarse_lu = None
        if cfg.coarse_solve == "exact":
            self._coarse_lu = spla.splu(levels[0].H_assembled.tocsc())
        self.transfer_counters = perf.KernelCounters()

    @property
    def finest(self) -> HelmholtzLevel:
        return self.levels[-1]

    def vcycle(self, b: np.ndarray) -> np.ndarray:
        return self._cycle(len(self.levels) - 1, b)

    __call__ = vcycle

    def _cycle(self, n: int, b: np.ndarray) -> np.ndarray:
        level, cfg = self.levels[n], self.cfg
        t0 = time.perf_counter()
        if n == 0:
            if self._coarse_lu is not None:
                x = self._coarse_lu.solve(b)
            else:
                x = level.smooth(None, b, cfg.n_coarse)
            level.counters.record(perf.LEVEL_TOTAL, 0, 0, time.perf_counter() - t0)
            return x
        x = level.smooth(None, b, cfg.n_pre)
        r = b - level.apply(x) if cfg.n_pre else b
        bc = restrict_residual(level.grid, r)
        t_mid = time.perf_counter()
        ec = self._cycle(n - 1, bc)
        t_back = time.perf_counter()
        x = x + prolong_correction(level.grid, ec)
        x = level.smooth(x, b, cfg.n_post)
        level.counters.record(perf.LEVEL_TOTAL, 0, 0, (t_mid - t0) + (time.perf_counter() - t_back))
        return x

    def error_propagation(self, e: np.ndarray) -> np.ndarray:
        """(I - V H^) e on the finest level."""
        return e - self.vcycle(self.finest.H_assembled @ e)


def single_level_preconditioner(level: HelmholtzLevel, r_p: np.ndarray, n_steps: int = 2) -> np.ndarray:
    return level.smooth(None, r_p, n_steps)


class SchurPreconditioner:
    """Approximate inverse of the 2x2 mixed operator via its Schur factorisation.

    ``mass_inverse`` maps a velocity residual to ``M2~^-1 r`` (a lumped
    diagonal by default); ``pressure_solve`` approximates ``H^-1``.
    """

    def __init__(self, op: MixedOperator2x2, pressure_solve: Callable[[np.ndarray], np.ndarray],
                 mass_inverse: Callable[[np.ndarray], np.ndarray] | np.ndarray | None = None):
        self.op = op
        self.pressure_solve = pressure_solve
        if mass_inverse is None:
            mass_inverse = op.M2_tilde_inv_lumped
        if isinstance(mass_inverse, np.ndarray):
            diag = mass_inverse
            mass_inverse = lambda r: diag * r
        self.mass_inverse = mass_inverse

    def apply(self, r: np.ndarray) -> np.ndarray:
        r_u, r_p = self.op.split(r)
        s_u = self.mass_inverse(r_u)
        t_p = r_p - self.op.divergence @ s_u
        s_p = self.pressure_solve(t_p)
        du = s_u - self.mass_inverse(self.op.gradient @ s_p)
        return np.concatenate([du, s_p])

    __call__ = apply


def apply_schur_preconditioner(prec: SchurPreconditioner, r: np.ndarray) -> np.ndarray:
    return prec.apply(r)


def exact_schur_preconditioner(op: MixedOperator2x2) -> SchurPreconditioner:
    """Exact M2~^-1 and exact H^-1 (dense); only for small test problems."""
    M = op.M2_tilde.toarray()
    Minv = np.linalg.inv(M)
    wc2 = op.params.omega_c ** 2
    D = op.ops.D.toarray()
    H = op.ops.M3.to_sparse().toarray() + wc2 * D @ Minv @ D.T
    Hinv = np.linalg.inv(H)
    return SchurPreconditioner(op, lambda b: Hinv @ b, lambda r: Minv @ r)


@dataclass
class PreconditionerBundle:
    """A ready-to-use preconditioner plus the pieces the reports need."""

    kind: str
    apply: Callable[[np.ndarray], np.ndarray]
    levels: list
    mg: Optional[MultigridSolver] = None
    setup_seconds: float = 0.0


def build_preconditioner(kind: str, op: MixedOperator2x2, hierarchy: GridHierarchy,
                         cfg: MGConfig = MGConfig(), n_single: int = 2) -> PreconditionerBundle:
    """``kind`` is ``'mg'``, ``'single'`` or ``'none'``."""
    t0 = time.perf_counter()
    if kind == "none":
        return PreconditionerBundle("none", lambda r: r.copy(), [], None, 0.0)
    if kind == "mg":
        levels = build_levels(hierarchy, op.params, cfg, ops_fine=op.ops)
        mg = MultigridSolver(levels, cfg)
        prec = SchurPreconditioner(op, mg.vcycle)
        return PreconditionerBundle("mg", prec.apply, levels, mg, time.perf_counter() - t0)
    if kind == "single":
        level = HelmholtzLevel(hierarchy.finest, op.params, cfg.omega, ops=op.ops)
        prec = SchurPreconditioner(op, lambda b: single_level_preconditioner(level, b, n_single))
        return PreconditionerBundle("single", prec.apply, [level], None, time.perf_counter() - t0)
    raise ValueError(f"unknown preconditioner {kind!r}; expected 'mg', 'single' or 'none'")
