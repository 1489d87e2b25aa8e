"""Memory-traffic performance model and model-based kernel counters.

Byte counts assume perfect caching of the vectors: a kernel streams each
matrix entry, each input entry and each output entry exactly once.
Scalars are 8 bytes, indices 4 bytes.
"""
from __future__ import annotations

import math
import threading
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from tpmg import _kernels

SIZEOF_DOUBLE = 8
SIZEOF_INT = 4


def bytes_banded_apply(m: int, n_bw: int) -> int:
    """Per column: matrix ``m*n_bw`` plus input and output vectors."""
    return SIZEOF_DOUBLE * m * (n_bw + 2)


def bytes_tridiagonal_solve(m: int) -> int:
    # factors stored in a 3-wide panel, so the traffic equals a tridiagonal apply
    return bytes_banded_apply(m, 3)


def bytes_banded_lu_solve(m: int, n_bw: int) -> int:
    """Per column: (3/2) m (n_bw + 1) doubles of factors/vectors plus m pivot ints."""
    return 4 * m * (3 * n_bw + 4)


def bytes_csr_apply(M_rows: int, N_nz: int) -> int:
    """(2M + Nnz) doubles and (M + Nnz) ints."""
    return 20 * M_rows + 12 * N_nz


def flops_banded_apply(m: int, n_bw: int) -> int:
    return 2 * m * n_bw


def flops_tridiagonal_solve(m: int) -> int:
    return 5 * m


def flops_csr_apply(N_nz: int) -> int:
    return 2 * N_nz


def useful_bandwidth(n_bytes: float, n_columns: int, elapsed: float) -> float:
    """Model bytes per column times column count over measured time (bytes/s)."""
    if not elapsed > 0:
        raise ValueError(f"elapsed time must be positive, got {elapsed!r}")
    return n_bytes * n_columns / elapsed


@dataclass(frozen=True)
class MachineModel:
    R_peak: float
    BW_peak: float
    sizeof_scalar: int = SIZEOF_DOUBLE
    sizeof_index: int = SIZEOF_INT

    def __post_init__(self):
        if not (self.R_peak > 0 and self.BW_peak > 0):
            raise ValueError("peak flop rate and bandwidth must be positive")

    @property
    def balance(self) -> float:
        """Flops per byte of a balanced code."""
        return self.R_peak / self.BW_peak


# 24-core Ivy Bridge node: vendor peak flop rate and STREAM triad
ARCHER_NODE = MachineModel(R_peak=518.4e9, BW_peak=74.1e9)


def mf_vs_mx_ratio(flops_mf: float, bytes_mx: float, machine: MachineModel) -> float:
    """Predicted t_MF / t_MX for a flop-bound matrix-free vs a bandwidth-bound assembled apply."""
    if not (flops_mf > 0 and bytes_mx > 0):
        raise ValueError("flop and byte counts must be positive")
    return (flops_mf / machine.R_peak) / (bytes_mx / machine.BW_peak)


def breakeven_applications(t_assemble: float, t_apply_mx: float, t_apply_mf: float) -> int:
    """Smallest n >= 1 with t_assemble + n*t_mx <= n*t_mf; 0 if never amortised."""
    gain = t_apply_mf - t_apply_mx
    if not gain > 0:
        return 0
    n = max(1, math.ceil(t_assemble / gain))
    while n > 1 and t_assemble + (n - 1) * t_apply_mx <= (n - 1) * t_apply_mf:
        n -= 1
    while t_assemble + n * t_apply_mx > n * t_apply_mf:
        n += 1
    return n


def measure_stream_triad(n_bytes: int = 3 * 2**26, repeats: int = 7) -> float:
    """Best-of-``repeats`` STREAM triad bandwidth (bytes/s) over ``n_bytes`` of arrays.

    Counts 24 bytes per element as STREAM does.
    """
    n = max(1024, int(n_bytes) // 24)
    a = np.zeros(n)
    b = np.random.default_rng(0).random(n)
    c = np.random.default_rng(1).random(n)
    _kernels.stream_triad(a, b, c, 3.0)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        _kernels.stream_triad(a, b, c, 3.0)
        best = min(best, time.perf_counter() - t0)
    return 24 * n / best


@dataclass
class KernelStats:
    calls: int = 0
    bytes_model: float = 0.0
    flops_model: float = 0.0
    seconds: float = 0.0

    @property
    def useful_bw(self) -> float:
        return self.bytes_model / self.seconds if self.seconds > 0 else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["useful_bw"] = self.useful_bw
        return d


@dataclass
class KernelCounters:
    """Per-tag accumulation of calls, model bytes/flops and wall time."""

    stats: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, tag: str, n_bytes: float = 0, n_flops: float = 0, seconds: float = 0.0,
               calls: int = 1) -> None:
        with self._lock:
            s = self.stats.setdefault(tag, KernelStats())
            s.calls += calls
            s.bytes_model += n_bytes
            s.flops_model += n_flops
            s.seconds += seconds

    @contextmanager
    def timed(self, tag: str, n_bytes: float = 0, n_flops: float = 0):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.record(tag, n_bytes, n_flops, time.perf_counter() - t0)

    def __getitem__(self, tag: str) -> KernelStats:
        return self.stats.get(tag, KernelStats())

    def __contains__(self, tag):
        return tag in self.stats

    def merge(self, other: "KernelCounters") -> "KernelCounters":
        for tag, s in other.stats.items():
            self.record(tag, s.bytes_model, s.flops_model, s.seconds, s.calls)
        return self

    def reset(self) -> None:
        with self._lock:
            self.stats.clear()

    def total_bytes(self) -> float:
        return sum(s.bytes_model for s in self.stats.values())

    def total_seconds(self) -> float:
        return sum(s.seconds for s in self.stats.values())

    def useful_bandwidth(self, tag: str) -> float:
        s = self[tag]
        return useful_bandwidth(s.bytes_model, 1, s.seconds)

    def to_dict(self) -> dict:
        return {tag: s.to_dict() for tag, s in sorted(self.stats.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelCounters":
        out = cls()
        for tag, s in d.items():
            out.record(tag, s.get("bytes_model", 0), s.get("flops_model", 0),
                       s.get("seconds", 0.0), s.get("calls", 0))
        return out


# kernel tags
HH_APPLY = "Hh_apply"
HZ_APPLY = "Hz_apply"
HZ_SOLVE = "Hz_solve"
MIXED_APPLY = "mixed_apply"
SMOOTHER = "smoother"
TRANSFER = "transfer"
LEVEL_TOTAL = "level_total"
