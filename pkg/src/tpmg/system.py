"""The implicit linear gravity-wave system.

Increments ``(U, P, B)`` satisfy the block system

    [ M2            -dt/2 D^T   -dt/2 Q ] [U]   [f_u]
    [ dt/2 c^2 D     M3          0      ] [P] = [f_p]
    [ dt/2 N^2 Q^T   0           Mb     ] [B]   [f_b]

with the dual right-hand sides ``f_u = M2 R_u`` etc.  Because buoyancy and
vertical velocity share their dofs, ``B`` can be eliminated exactly, leaving
a 2x2 velocity-pressure system with ``M2~ = M2h (+) (1 + omega_N^2) M2z``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from tpmg import perf
from tpmg.banded import ThomasFactors, apply as banded_apply
from tpmg.fem import DiscreteOperators


@dataclass(frozen=True)
class PhysicsParams:
    c: float = 300.0
    N: float = 0.01
    dt: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"speed of sound must be positive, got {self.c!r}")
        if not self.N >= 0:
            raise ValueError(f"buoyancy frequency must be non-negative, got {self.N!r}")
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt!r}")

    @classmethod
    def from_courant(cls, nu_cfl: float, dx: float, c: float = 300.0, N: float = 0.01):
        if not nu_cfl > 0:
            raise ValueError(f"Courant number must be positive, got {nu_cfl!r}")
        return cls(c=c, N=N, dt=nu_cfl * dx / c)

    @property
    def omega_c(self) -> float:
        return 0.5 * self.dt * self.c

    @property
    def omega_N(self) -> float:
        return 0.5 * self.dt * self.N

    def nu_cfl(self, dx: float) -> float:
        return self.c * self.dt / dx


@dataclass
class MixedState:
    U: np.ndarray
    P: np.ndarray
    B: np.ndarray


def build_rhs(ops: DiscreteOperators, params: PhysicsParams, u0, p0, b0):
    """Dual right-hand sides (M2 R_u, M3 R_p, Mb R_b) from the previous state."""
    lay = ops.layouts
    for name, v, n in (("u0", u0, lay.n_velocity), ("p0", p0, lay.W3.size), ("b0", b0, lay.Wb.size)):
        if np.size(v) != n:
            raise ValueError(f"{name} has {np.size(v)} entries, expected {n}")
    dt, c2, N2 = params.dt, params.c ** 2, params.N ** 2
    f_u = dt * (ops.D.T @ p0 + ops.Q_full @ b0)
    f_p = -dt * c2 * (ops.D @ u0)
    f_b = -dt * N2 * (ops.Q_full.T @ u0)
    return f_u, f_p, f_b


def assemble_3x3(ops: DiscreteOperators, params: PhysicsParams) -> sp.csr_matrix:
    h, c2, N2 = 0.5 * params.dt, params.c ** 2, params.N ** 2
    D, Q = ops.D, ops.Q_full
    return sp.bmat([
        [ops.M2, -h * D.T, -h * Q],
        [h * c2 * D, ops.M3.to_sparse(), None],
        [h * N2 * Q.T, None, ops.Mb.to_sparse()],
    ], format="csr")


class MixedOperator2x2:
    """Assembled velocity-pressure operator; applications are counted as CSR traffic."""

    def __init__(self, ops: DiscreteOperators, params: PhysicsParams,
                 counters: perf.KernelCounters | None = None):
        self.ops = ops
        self.params = params
        self.counters = counters if counters is not None else perf.KernelCounters()
        self.n_u = ops.layouts.n_velocity
        self.n_p = ops.layouts.n_pressure
        t0 = time.perf_counter()
        h = 0.5 * params.dt
        self.M2_tilde = sp.block_diag(
            [ops.M2h, (1.0 + params.omega_N ** 2) * ops.M2z_sparse], format="csr")
        self.gradient = (-h * ops.D.T).tocsr()
        self.divergence = (h * params.c ** 2 * ops.D).tocsr()
        self.matrix = sp.bmat([[self.M2_tilde, self.gradient],
                               [self.divergence, ops.M3.to_sparse()]], format="csr")
        self.assembly_seconds = time.perf_counter() - t0
        self._bytes = perf.bytes_csr_apply(self.matrix.shape[0], self.matrix.nnz)
        self._flops = perf.flops_csr_apply(self.matrix.nnz)

    @property
    def shape(self):
        return self.matrix.shape

    def split(self, x):
        return x[: self.n_u], x[self.n_u:]

    def join(self, u, p):
        return np.concatenate([u, p])

    def apply(self, x: np.ndarray) -> np.ndarray:
        t0 = time.perf_counter()
        y = self.matrix @ x
        self.counters.record(perf.MIXED_APPLY, self._bytes, self._flops, time.perf_counter() - t0)
        return y

    __call__ = apply

    @cached_property
    def M2_tilde_inv_lumped(self) -> np.ndarray:
        return 1.0 / self.M2_tilde.diagonal()


def _mb_solver(ops: DiscreteOperators) -> ThomasFactors:
    return ThomasFactors(ops.Mb)


def eliminate_buoyancy(ops: DiscreteOperators, params: PhysicsParams, rhs3,
                       counters: perf.KernelCounters | None = None):
    """Reduce the 3x3 system to the 2x2 velocity-pressure system.

    Returns the operator and the stacked dual right-hand side
    ``[f_u + dt/2 Q Mb^-1 f_b, f_p]``.
    """
    f_u, f_p, f_b = rhs3
    op = MixedOperator2x2(ops, params, counters)
    if f_b.size:
        R_b = _mb_solver(ops).solve(f_b)
        f_u = f_u + 0.5 * params.dt * (ops.Q_full @ R_b)
    return op, np.concatenate([f_u, f_p])


def reconstruct_buoyancy(ops: DiscreteOperators, params: PhysicsParams, U, f_b) -> np.ndarray:
    """B = Mb^-1 (f_b - dt/2 N^2 Q^T U), one tridiagonal solve per column."""
    if not f_b.size:
        return np.zeros(0)
    U_z = U[ops.layouts.W2h.size:]
    rhs = f_b - 0.5 * params.dt * params.N ** 2 * banded_apply(ops.Q.T, U_z)
    return _mb_solver(ops).solve(rhs)
