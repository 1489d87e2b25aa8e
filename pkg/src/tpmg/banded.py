"""Columnwise generalised banded matrices.

A :class:`BandedMatrix` stores one block per vertical grid column.  Within a
block, entry ``(i, j)`` may be nonzero only if
``-gamma_minus <= alpha*i - beta*j <= gamma_plus``; every row is stored as a
fixed-width slice of ``bandwidth`` values starting at the (unclamped) column
``j_m(i) = ceil((alpha*i - gamma_plus)/beta)``, a generalisation of LAPACK's
band storage to operators between spaces with different vertical layouts.

All operations act independently on each grid column.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from math import gcd

import numpy as np
import scipy.sparse as sp

from tpmg import _kernels


class SingularColumnError(np.linalg.LinAlgError):
    def __init__(self, column: int, method: str):
        super().__init__(f"zero pivot in {method} of grid column {column}")
        self.column = column


@dataclass(frozen=True)
class BandPattern:
    alpha: int
    beta: int
    gamma_minus: int
    gamma_plus: int
    n_row: int
    n_col: int

    def __post_init__(self):
        if self.alpha < 1 or self.beta < 1:
            raise ValueError(f"alpha, beta must be positive, got {self.alpha}, {self.beta}")
        if gcd(self.alpha, self.beta) != 1:
            raise ValueError(f"gcd(alpha={self.alpha}, beta={self.beta}) must be 1")
        if self.gamma_minus < 0 or self.gamma_plus < 0:
            raise ValueError("gamma_minus and gamma_plus must be non-negative")
        if self.n_row < 0 or self.n_col < 0:
            raise ValueError("block dimensions must be non-negative")

    @property
    def bandwidth(self) -> int:
        return (self.gamma_minus + self.gamma_plus) // self.beta + 1

    @property
    def shape(self):
        return self.n_row, self.n_col

    @property
    def is_tridiagonal(self) -> bool:
        return (self.alpha, self.beta, self.gamma_minus, self.gamma_plus) == (1, 1, 1, 1)

    def j_m(self, i):
        """Unclamped first column of row ``i`` (the storage origin)."""
        return -((self.gamma_plus - self.alpha * np.asarray(i)) // self.beta)

    def j_p(self, i):
        return (self.alpha * np.asarray(i) + self.gamma_minus) // self.beta

    def column_range(self, i: int):
        """Admissible, in-range columns of row ``i`` as a ``range``."""
        return range(max(0, int(self.j_m(i))), min(self.n_col, int(self.j_p(i)) + 1))

    def admissible(self, i, j):
        d = self.alpha * np.asarray(i) - self.beta * np.asarray(j)
        return (-self.gamma_minus <= d) & (d <= self.gamma_plus)

    def mask(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.n_row), np.arange(self.n_col), indexing="ij")
        return self.admissible(i, j)

    def transposed(self) -> "BandPattern":
        return BandPattern(self.beta, self.alpha, self.gamma_plus, self.gamma_minus,
                           self.n_col, self.n_row)

    def union(self, other: "BandPattern") -> "BandPattern":
        if (self.alpha, self.beta) != (other.alpha, other.beta):
            raise ValueError(
                f"incompatible band slopes ({self.alpha},{self.beta}) vs ({other.alpha},{other.beta})"
            )
        if self.shape != other.shape:
            raise ValueError(f"incompatible block shapes {self.shape} vs {other.shape}")
        return BandPattern(self.alpha, self.beta,
                           max(self.gamma_minus, other.gamma_minus),
                           max(self.gamma_plus, other.gamma_plus),
                           self.n_row, self.n_col)

    def compose(self, other: "BandPattern") -> "BandPattern":
        """Smallest pattern containing every product ``self @ other``."""
        if self.n_col != other.n_row:
            raise ValueError(f"inner dimensions differ: {self.n_col} vs {other.n_row}")
        a1, b1, a2, b2 = self.alpha, self.beta, other.alpha, other.beta
        # a2*(a1 i - b1 k) + b1*(a2 k - b2 j) = a1 a2 i - b1 b2 j
        g = gcd(a1 * a2, b1 * b2)
        lo = a2 * self.gamma_minus + b1 * other.gamma_minus
        hi = a2 * self.gamma_plus + b1 * other.gamma_plus
        return BandPattern(a1 * a2 // g, b1 * b2 // g, lo // g, hi // g,
                           self.n_row, other.n_col)


def diagonal_pattern(n: int) -> BandPattern:
    return BandPattern(1, 1, 0, 0, n, n)


def tridiagonal_pattern(n: int) -> BandPattern:
    return BandPattern(1, 1, 1, 1, n, n)


class BandedMatrix:
    """Block-diagonal operator with one generalised banded block per grid column."""

    def __init__(self, pattern: BandPattern, data: np.ndarray):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[1:] != (pattern.n_row, pattern.bandwidth):
            raise ValueError(
                f"data shape {data.shape} incompatible with (n_columns, {pattern.n_row}, "
                f"{pattern.bandwidth})"
            )
        self.pattern = pattern
        self.data = data

    @classmethod
    def zeros(cls, pattern: BandPattern, n_columns: int) -> "BandedMatrix":
        return cls(pattern, np.zeros((n_columns, pattern.n_row, pattern.bandwidth)))

    @classmethod
    def from_dense(cls, pattern: BandPattern, blocks) -> "BandedMatrix":
        """Pack dense column blocks ``(n_columns, n_row, n_col)``; entries off-pattern are dropped."""
        blocks = np.asarray(blocks, dtype=np.float64)
        if blocks.ndim == 2:
            blocks = blocks[None]
        A = cls.zeros(pattern, blocks.shape[0])
        for i in range(pattern.n_row):
            cols = pattern.column_range(i)
            if len(cols):
                off = cols.start - int(pattern.j_m(i))
                A.data[:, i, off:off + len(cols)] = blocks[:, i, cols.start:cols.stop]
        return A

    @classmethod
    def from_diagonal(cls, diag) -> "BandedMatrix":
        diag = np.asarray(diag, dtype=np.float64)
        return cls(diagonal_pattern(diag.shape[1]), diag[:, :, None].copy())

    @property
    def n_columns(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        """Global shape of the block-diagonal operator."""
        return self.n_columns * self.pattern.n_row, self.n_columns * self.pattern.n_col

    @property
    def nbytes_per_column(self) -> int:
        return self.pattern.n_row * self.pattern.bandwidth * self.data.itemsize

    def copy(self) -> "BandedMatrix":
        return BandedMatrix(self.pattern, self.data.copy())

    def column_block(self, column: int) -> np.ndarray:
        """Dense ``n_row x n_col`` block of one grid column."""
        p = self.pattern
        out = np.zeros((p.n_row, p.n_col))
        for i in range(p.n_row):
            cols = p.column_range(i)
            off = cols.start - int(p.j_m(i))
            out[i, cols.start:cols.stop] = self.data[column, i, off:off + len(cols)]
        return out

    def to_dense_blocks(self) -> np.ndarray:
        return np.stack([self.column_block(c) for c in range(self.n_columns)]) if self.n_columns else \
            np.zeros((0, self.pattern.n_row, self.pattern.n_col))

    def to_sparse(self) -> sp.csr_matrix:
        """Global block-diagonal sparse matrix in column-contiguous dof order."""
        p = self.pattern
        rows, cols, offs = [], [], []
        for i in range(p.n_row):
            r = p.column_range(i)
            rows.extend([i] * len(r))
            cols.extend(r)
            offs.extend(j - int(p.j_m(i)) for j in r)
        rows, cols, offs = map(lambda a: np.asarray(a, dtype=np.int64), (rows, cols, offs))
        c = np.arange(self.n_columns)[:, None]
        vals = self.data[:, rows, offs]
        R = (c * p.n_row + rows[None]).ravel()
        C = (c * p.n_col + cols[None]).ravel()
        return sp.csr_matrix((vals.ravel(), (R, C)), shape=self.shape)

    def diagonal(self) -> np.ndarray:
        """(n_columns, n) main diagonal of square blocks."""
        p = self.pattern
        if p.n_row != p.n_col:
            raise ValueError("diagonal() needs square blocks")
        i = np.arange(p.n_row)
        if not np.all(p.admissible(i, i)):
            raise ValueError("pattern does not contain the main diagonal")
        return self.data[:, i, i - p.j_m(i)]

    def apply(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        return apply(self, x, out)

    def __matmul__(self, other):
        if isinstance(other, BandedMatrix):
            return matmul(self, other)
        return apply(self, other)

    def __add__(self, other):
        return add(self, other, 1.0, 1.0)

    def __sub__(self, other):
        return add(self, other, 1.0, -1.0)

    def __mul__(self, scalar):
        return BandedMatrix(self.pattern, self.data * float(scalar))

    __rmul__ = __mul__

    @property
    def T(self) -> "BandedMatrix":
        return transpose(self)

    def __repr__(self):
        p = self.pattern
        return (f"BandedMatrix(alpha={p.alpha}, beta={p.beta}, gamma=({p.gamma_minus}, "
                f"{p.gamma_plus}), block={p.n_row}x{p.n_col}, n_columns={self.n_columns})")


def assemble(pattern: BandPattern, n_columns: int, entry) -> BandedMatrix:
    """Build a banded matrix from ``entry(column, i, j)`` on admissible positions.

    ``entry`` may also accept array arguments; it is called once per admissible
    (i, j) with the vector of all column ids.
    """
    A = BandedMatrix.zeros(pattern, n_columns)
    cols = np.arange(n_columns)
    for i in range(pattern.n_row):
        jm = int(pattern.j_m(i))
        for j in pattern.column_range(i):
            A.data[:, i, j - jm] = entry(cols, i, j)
    return A


def _as_columns(A: BandedMatrix, x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size != A.n_columns * n:
        raise ValueError(f"{what} has {x.size} entries, expected {A.n_columns} columns x {n}")
    return np.ascontiguousarray(x.reshape(A.n_columns, n))


def apply(A: BandedMatrix, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """y = A x, column by column; ``x`` flat (column-contiguous) or (n_columns, n_col)."""
    p = A.pattern
    xc = _as_columns(A, x, p.n_col, "input vector")
    y = np.empty((A.n_columns, p.n_row)) if out is None else out.reshape(A.n_columns, p.n_row)
    if p.n_row == 0:
        pass
    elif p.is_tridiagonal:
        _kernels.apply_tridiagonal(A.data, xc, y)
    else:
        _kernels.apply_general(A.data, xc, y, p.alpha, p.beta, p.gamma_minus, p.gamma_plus)
    if out is not None:
        return out
    return y.reshape(-1) if np.ndim(x) == 1 else y


def add(A: BandedMatrix, B: BandedMatrix, a: float = 1.0, b: float = 1.0) -> BandedMatrix:
    """a*A + b*B on the union pattern."""
    if A.n_columns != B.n_columns:
        raise ValueError(f"column counts differ: {A.n_columns} vs {B.n_columns}")
    pat = A.pattern.union(B.pattern)
    C = BandedMatrix.zeros(pat, A.n_columns)
    for M, s in ((A, a), (B, b)):
        q = M.pattern
        _kernels.accumulate(C.data, M.data, float(s), q.alpha, q.beta, q.gamma_minus,
                            q.gamma_plus, pat.gamma_plus, q.n_col)
    return C


def transpose(A: BandedMatrix) -> BandedMatrix:
    p = A.pattern
    T = BandedMatrix.zeros(p.transposed(), A.n_columns)
    _kernels.transpose(A.data, T.data, p.alpha, p.beta, p.gamma_minus, p.gamma_plus, p.n_col)
    return T


def matmul(A: BandedMatrix, B: BandedMatrix) -> BandedMatrix:
    """A @ B per grid column."""
    if A.n_columns != B.n_columns:
        raise ValueError(f"column counts differ: {A.n_columns} vs {B.n_columns}")
    pa, pb = A.pattern, B.pattern
    pc = pa.compose(pb)
    C = BandedMatrix.zeros(pc, A.n_columns)
    _kernels.matmul(A.data, B.data, C.data,
                    pa.alpha, pa.beta, pa.gamma_minus, pa.gamma_plus,
                    pb.alpha, pb.beta, pb.gamma_minus, pb.gamma_plus,
                    pc.alpha, pc.beta, pc.gamma_plus, pa.n_col, pb.n_col)
    return C


def matmul_transpose(A: BandedMatrix, B: BandedMatrix) -> BandedMatrix:
    """A^T @ B per grid column."""
    return matmul(transpose(A), B)


@dataclass
class LUFactors:
    """Banded LU with partial pivoting; ``panel`` holds kl extra rows for fill-in."""

    panel: np.ndarray
    pivots: np.ndarray
    kl: int
    ku: int

    @property
    def n_columns(self) -> int:
        return self.panel.shape[0]

    @property
    def n(self) -> int:
        return self.panel.shape[1]

    def solve(self, y: np.ndarray) -> np.ndarray:
        return lu_solve(self, y)


def _square_bands(p: BandPattern):
    if p.n_row != p.n_col:
        raise ValueError(f"column blocks must be square, got {p.n_row}x{p.n_col}")
    kl = ku = 0
    for i in range(p.n_row):
        r = p.column_range(i)
        if len(r):
            kl = max(kl, i - r.start)
            ku = max(ku, r.stop - 1 - i)
    return kl, ku


def lu_factor(A: BandedMatrix) -> LUFactors:
    p = A.pattern
    kl, ku = _square_bands(p)
    n = p.n_row
    w = np.zeros((A.n_columns, n, 2 * kl + ku + 1))
    _kernels.to_lapack_band(A.data, w, p.alpha, p.beta, p.gamma_minus, p.gamma_plus, kl)
    piv = np.zeros((A.n_columns, n), dtype=np.int32)
    bad = _kernels.band_lu(w, piv, kl, ku)
    if bad >= 0:
        raise SingularColumnError(bad, "LU factorisation")
    return LUFactors(w, piv, kl, ku)


def lu_solve(F: LUFactors, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.size != F.n_columns * F.n:
        raise ValueError(f"right-hand side has {y.size} entries, expected {F.n_columns * F.n}")
    x = np.array(y.reshape(F.n_columns, F.n), dtype=np.float64, copy=True)
    _kernels.band_lu_solve(F.panel, F.pivots, x, F.kl, F.ku)
    return x.reshape(y.shape)


class ThomasFactors:
    """Precomputed unpivoted tridiagonal elimination, one column block per grid column."""

    def __init__(self, A: BandedMatrix):
        if not A.pattern.is_tridiagonal:
            raise ValueError(f"Thomas algorithm needs a tridiagonal pattern, got {A.pattern}")
        self.n_columns = A.n_columns
        self.n = A.pattern.n_row
        self.factors = np.empty_like(A.data)
        bad = _kernels.thomas_factor(A.data, self.factors)
        if bad >= 0:
            raise SingularColumnError(bad, "Thomas elimination")

    def solve(self, y: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.size != self.n_columns * self.n:
            raise ValueError(f"right-hand side has {y.size} entries, expected {self.n_columns * self.n}")
        yc = np.ascontiguousarray(y.reshape(self.n_columns, self.n))
        x = np.empty_like(yc) if out is None else out.reshape(self.n_columns, self.n)
        if self.n:
            _kernels.thomas_solve(self.factors, yc, x)
        return x.reshape(y.shape) if out is None else out


def thomas_factor(A: BandedMatrix) -> ThomasFactors:
    return ThomasFactors(A)


def thomas_solve(A: BandedMatrix, y: np.ndarray) -> np.ndarray:
    return ThomasFactors(A).solve(y)


def dump_column_csv(A: BandedMatrix, column: int, f=None) -> str:
    """Write one column panel as CSV rows ``row,j_min,v0,...``; returns the text."""
    p = A.pattern
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "j_min"] + [f"v{b}" for b in range(p.bandwidth)])
    for i in range(p.n_row):
        w.writerow([i, int(p.j_m(i))] + [repr(float(v)) for v in A.data[column, i]])
    text = buf.getvalue()
    if f is not None:
        if hasattr(f, "write"):
            f.write(text)
        else:
            with open(f, "w") as fh:
                fh.write(text)
    return text


def load_column_csv(source, pattern: BandPattern) -> np.ndarray:
    """Read a panel written by :func:`dump_column_csv` back into ``(n_row, bandwidth)``."""
    text = source.read() if hasattr(source, "read") else open(source).read()
    rows = list(csv.reader(io.StringIO(text)))[1:]
    panel = np.zeros((pattern.n_row, pattern.bandwidth))
    for r in rows:
        i, jm = int(r[0]), int(r[1])
        if jm != int(pattern.j_m(i)):
            raise ValueError(f"row {i}: j_min {jm} does not match pattern ({int(pattern.j_m(i))})")
        panel[i] = [float(v) for v in r[2:]]
    return panel
