"""Restarted, right-preconditioned GMRES with modified Gram-Schmidt."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class KrylovConfig:
    restart: int = 30
    rtol: float = 1e-5
    max_iter: int = 1000

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError(f"restart length must be >= 1, got {self.restart}")
        if not 0 < self.rtol < 1:
            raise ValueError(f"rtol must lie in (0, 1), got {self.rtol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class SolveReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    t_setup: float = 0.0
    t_iter: float = 0.0
    counters: dict = field(default_factory=dict)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")

    @property
    def relative_residual(self) -> float:
        return self.residuals[-1] / self.residuals[0] if self.residuals and self.residuals[0] else 0.0

    def history_csv(self) -> str:
        lines = ["iter,resnorm"]
        lines += [f"{i},{r:.17g}" for i, r in enumerate(self.residuals)]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "n_iter": self.iterations,
            "converged": self.converged,
            "final_residual": self.final_residual,
            "relative_residual": self.relative_residual,
            "t_total": self.t_setup + self.wall_time,
            "t_setup": self.t_setup,
            "t_solve": self.wall_time,
            "t_iter": self.t_iter,
        }


# relative size of a new Arnoldi direction treated as exact (lucky) breakdown
_BREAKDOWN = 1e-14
_REORTH = 1 / np.sqrt(2)


def _givens(a: float, b: float):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def _orthogonalise(V: np.ndarray, w: np.ndarray, m: int, h: np.ndarray) -> float:
    """Modified Gram-Schmidt of ``w`` against rows ``V[:m]``; coefficients into ``h``.

    A second pass runs only when cancellation shrank ``w`` below ``1/sqrt(2)``
    of its length, which keeps the basis orthonormal to roundoff once the
    Krylov space nearly saturates.
    """
    norm0 = np.linalg.norm(w)
    for i in range(m):
        h[i] = V[i] @ w
        w -= h[i] * V[i]
    norm = np.linalg.norm(w)
    if norm < _REORTH * norm0:
        for i in range(m):
            c = V[i] @ w
            h[i] += c
            w -= c * V[i]
        norm = np.linalg.norm(w)
    return float(norm)


def arnoldi(A: Callable, v0: np.ndarray, k: int, M: Optional[Callable] = None):
    """k steps of Arnoldi on A M with modified Gram-Schmidt.

    Returns ``(V, H)`` with ``V`` of shape (n, j+1) and ``H`` (j+1, j) where
    ``j <= k`` (early exit on breakdown).
    """
    n = v0.size
    V = np.zeros((k + 1, n))
    H = np.zeros((k + 1, k))
    V[0] = v0 / np.linalg.norm(v0)
    for j in range(k):
        # copy: callbacks may hand back their input
        w = np.array(A(M(V[j]) if M is not None else V[j]), dtype=np.float64)
        H[j + 1, j] = _orthogonalise(V, w, j + 1, H[:, j])
        if H[j + 1, j] <= _BREAKDOWN * abs(H[: j + 1, j]).max(initial=0.0):
            return V[: j + 1].T, H[: j + 1, : j + 1]
        V[j + 1] = w / H[j + 1, j]
    return V.T, H


def gmres(A: Callable, b: np.ndarray, M: Optional[Callable] = None,
          cfg: KrylovConfig = KrylovConfig(), callback: Optional[Callable] = None):
    """Solve ``A x = b`` from ``x = 0`` with right preconditioner ``M``.

    Convergence is tested on ``||b - A x|| / ||b|| <= rtol``.  Inside a cycle
    the residual norm comes from the least-squares recurrence; at the end of
    every cycle the true residual is recomputed and replaces the last entry of
    the history.  Returns ``(x, SolveReport)``; non-convergence is reported,
    not raised.
    """
    t_start = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    x = np.zeros(n)
    report = SolveReport()
    beta0 = float(np.linalg.norm(b))
    report.residuals.append(beta0)
    if beta0 == 0.0:
        report.converged = True
        report.wall_time = time.perf_counter() - t_start
        return x, report
    target = cfg.rtol * beta0
    apply_M = M if M is not None else (lambda v: v)

    r = b.copy()
    beta = beta0
    m = cfg.restart
    while report.iterations < cfg.max_iter:
        V = np.zeros((m + 1, n))
        Hm = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        for j in range(m):
            w = np.array(A(apply_M(V[j])), dtype=np.float64)
            Hm[j + 1, j] = _orthogonalise(V, w, j + 1, Hm[:, j])
            breakdown = Hm[j + 1, j] <= _BREAKDOWN * abs(Hm[: j + 1, j]).max(initial=0.0)
            if not breakdown:
                V[j + 1] = w / Hm[j + 1, j]
            for i in range(j):
                t = cs[i] * Hm[i, j] + sn[i] * Hm[i + 1, j]
                Hm[i + 1, j] = -sn[i] * Hm[i, j] + cs[i] * Hm[i + 1, j]
                Hm[i, j] = t
            cs[j], sn[j] = _givens(Hm[j, j], Hm[j + 1, j])
            Hm[j, j] = cs[j] * Hm[j, j] + sn[j] * Hm[j + 1, j]
            Hm[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            report.iterations += 1
            j_done = j + 1
            report.residuals.append(float(abs(g[j + 1])))
            if callback is not None:
                callback(report.iterations, report.residuals[-1])
            if abs(g[j + 1]) <= target or breakdown or report.iterations >= cfg.max_iter:
                break
        y = np.linalg.solve(np.triu(Hm[:j_done, :j_done]), g[:j_done])
        x += apply_M(V[:j_done].T @ y)
        r = b - A(x)
        beta = float(np.linalg.norm(r))
        report.residuals[-1] = beta
        if beta <= target:
            report.converged = True
            break
        if beta == 0.0:
            break
    report.wall_time = time.perf_counter() - t_start
    report.t_iter = report.wall_time / max(report.iterations, 1)
    return x, report
