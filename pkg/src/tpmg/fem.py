"""Lowest-order mimetic finite elements on the extruded grid.

Spaces (horizontal element x vertical element):

* ``W2h`` horizontal velocity, RT0 on quadrilaterals x DG0: one normal
  component per vertical facet and layer.  Each column owns its west and
  south facets, giving ``2*nz`` dofs per column (facet d=0 west, d=1 south).
* ``W2z`` vertical velocity, DG0 x P1 with the top and bottom levels removed
  (``u.n = 0``): ``nz-1`` dofs per column on the interior levels.
* ``Wb`` buoyancy, colocated with ``W2z`` (Charney-Phillips).
* ``W3`` pressure, DG0 x DG0: ``nz`` dofs per column.

Every space is stored column-contiguously.  Column-local operators are
:class:`~tpmg.banded.BandedMatrix`; operators coupling neighbouring columns
(``M2h`` and ``Dh``) are CSR.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse as sp

from tpmg.banded import BandPattern, BandedMatrix, diagonal_pattern, tridiagonal_pattern
from tpmg.grid import ExtrudedGrid

# 1D reference integrals on [0, 1]
P1_MASS = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
P1_DIV = np.array([-1.0, 1.0])


@dataclass(frozen=True)
class FunctionSpaceLayout:
    tag: str
    dofs_per_column: int
    n_columns: int

    @property
    def size(self) -> int:
        return self.dofs_per_column * self.n_columns

    def index(self, column, local):
        local = np.asarray(local)
        if np.any((local < 0) | (local >= self.dofs_per_column)):
            raise IndexError(f"local dof {local} outside {self.tag} column of {self.dofs_per_column}")
        return np.asarray(column) * self.dofs_per_column + local

    def columns(self, v: np.ndarray) -> np.ndarray:
        """View a dof vector as (n_columns, dofs_per_column)."""
        if v.size != self.size:
            raise ValueError(f"{self.tag} vector has {v.size} entries, expected {self.size}")
        return v.reshape(self.n_columns, self.dofs_per_column)


@dataclass(frozen=True)
class Layouts:
    W2h: FunctionSpaceLayout
    W2z: FunctionSpaceLayout
    W3: FunctionSpaceLayout
    Wb: FunctionSpaceLayout

    @property
    def n_velocity(self) -> int:
        return self.W2h.size + self.W2z.size

    @property
    def n_pressure(self) -> int:
        return self.W3.size

    def dofs_per_cell(self, nz: int) -> float:
        """Velocity plus pressure unknowns per 3D cell."""
        return (self.W2h.dofs_per_column + self.W2z.dofs_per_column + self.W3.dofs_per_column) / nz


def build_layouts(grid: ExtrudedGrid) -> Layouts:
    nz, nc = grid.nz, grid.n_columns
    if nz < 2:
        warnings.warn(f"nz={nz}: vertical velocity and buoyancy spaces are empty", stacklevel=2)
    return Layouts(
        W2h=FunctionSpaceLayout("W2h", 2 * nz, nc),
        W2z=FunctionSpaceLayout("W2z", nz - 1, nc),
        W3=FunctionSpaceLayout("W3", nz, nc),
        Wb=FunctionSpaceLayout("Wb", nz - 1, nc),
    )


def _vertical_elements(nz: int):
    """Per cell k: local W2z dofs (bottom, top) as column-local indices, -1 if stripped."""
    k = np.arange(nz)
    bottom = np.where(k >= 1, k - 1, -1)
    top = np.where(k <= nz - 2, k, -1)
    return np.stack([bottom, top], axis=1)


def _columnwise_from_elements(pattern: BandPattern, n_columns: int, row_dofs, col_dofs, local):
    """Sum identical element matrices into a banded matrix (uniform in every column).

    ``row_dofs``/``col_dofs`` are (n_elements, n_local) column-local indices
    (-1 = absent), ``local`` the (n_local_rows, n_local_cols) element matrix.
    """
    block = np.zeros(pattern.shape)
    for rd, cd in zip(row_dofs, col_dofs):
        for a, i in enumerate(rd):
            if i < 0:
                continue
            for b, j in enumerate(cd):
                if j >= 0:
                    block[i, j] += local[a, b]
    if np.any(block[~pattern.mask()]):
        raise AssertionError("element contributions fall outside the declared band")
    A = BandedMatrix.from_dense(pattern, block[None])
    return BandedMatrix(pattern, np.repeat(A.data, n_columns, axis=0))


@dataclass
class DiscreteOperators:
    grid: ExtrudedGrid
    layouts: Layouts
    M2h: sp.csr_matrix
    Dh: sp.csr_matrix
    M2z: BandedMatrix
    Dz: BandedMatrix
    M3: BandedMatrix
    Mb: BandedMatrix
    Q: BandedMatrix

    @cached_property
    def M2z_sparse(self) -> sp.csr_matrix:
        return self.M2z.to_sparse()

    @cached_property
    def Dz_sparse(self) -> sp.csr_matrix:
        return self.Dz.to_sparse()

    @cached_property
    def M2(self) -> sp.csr_matrix:
        """Velocity mass matrix M2h (+) M2z on W2 = W2h (+) W2z."""
        return sp.block_diag([self.M2h, self.M2z_sparse], format="csr")

    @cached_property
    def D(self) -> sp.csr_matrix:
        """Weak divergence W2 -> W3-dual, [Dh, Dz]."""
        return sp.hstack([self.Dh, self.Dz_sparse], format="csr")

    @cached_property
    def Q_full(self) -> sp.csr_matrix:
        """Buoyancy coupling Wb -> W2-dual (zero horizontal block)."""
        Qz = self.Q.to_sparse()
        return sp.vstack([sp.csr_matrix((self.layouts.W2h.size, Qz.shape[1])), Qz], format="csr")

    @cached_property
    def M2h_inv(self) -> np.ndarray:
        return lump(self.M2h)

    @cached_property
    def M2z_inv(self) -> np.ndarray:
        return lump(self.M2z)

    @cached_property
    def M3_diag(self) -> np.ndarray:
        return self.M3.data[:, :, 0].reshape(-1)


def assemble_all(grid: ExtrudedGrid, layouts: Layouts | None = None) -> DiscreteOperators:
    layouts = layouts or build_layouts(grid)
    nx, ny, nz = grid.nx, grid.ny, grid.nz
    dx, dy, dz = grid.dx, grid.dy, grid.dz
    vol = grid.cell_volume
    nc = grid.n_columns

    # --- horizontal operators, element by element over all cells
    col = np.arange(nc)
    i, j = col % nx, col // nx
    east = grid.column_index((i + 1) % nx, j)
    north = grid.column_index(i, (j + 1) % ny)
    k = np.arange(nz)
    W2h = layouts.W2h
    xw = W2h.index(col[:, None], k[None, :])             # west facet, d=0
    xe = W2h.index(east[:, None], k[None, :])
    ys = W2h.index(col[:, None], nz + k[None, :])        # south facet, d=1
    yn = W2h.index(north[:, None], nz + k[None, :])
    cells = (col[:, None] * nz + k[None, :]).ravel()

    rows, cols, vals = [], [], []
    for lo, hi in ((xw, xe), (ys, yn)):
        dofs = (lo.ravel(), hi.ravel())
        for a in range(2):
            for b in range(2):
                rows.append(dofs[a])
                cols.append(dofs[b])
                vals.append(np.full(dofs[a].size, P1_MASS[a, b] * vol))
    M2h = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(W2h.size, W2h.size)).tocsr()
    M2h.sum_duplicates()

    rows, cols, vals = [], [], []
    for (lo, hi), face_area in (((xw, xe), dy * dz), ((ys, yn), dx * dz)):
        for dofs, sgn in ((lo, P1_DIV[0]), (hi, P1_DIV[1])):
            rows.append(cells)
            cols.append(dofs.ravel())
            vals.append(np.full(cells.size, sgn * face_area))
    Dh = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(layouts.W3.size, W2h.size)).tocsr()
    Dh.sum_duplicates()

    # --- column operators
    nzz = layouts.W2z.dofs_per_column
    vert = _vertical_elements(nz)
    own = k[:, None]
    M2z = _columnwise_from_elements(tridiagonal_pattern(nzz), nc, vert, vert, P1_MASS * vol)
    Dz = _columnwise_from_elements(BandPattern(1, 1, 0, 1, nz, nzz), nc, own, vert,
                                   P1_DIV[None, :] * dx * dy)
    M3 = _columnwise_from_elements(diagonal_pattern(nz), nc, own, own, np.array([[vol]]))
    Mb = M2z.copy()
    Q = M2z.copy()
    return DiscreteOperators(grid, layouts, M2h, Dh, M2z, Dz, M3, Mb, Q)


def lump(M) -> np.ndarray:
    """Inverse of the diagonal of a mass matrix, as a flat vector."""
    if isinstance(M, BandedMatrix):
        d = M.diagonal().reshape(-1)
    elif sp.issparse(M):
        d = M.diagonal()
    else:
        M = np.asarray(M)
        d = np.diag(M) if M.ndim == 2 else M
    if np.any(~(d > 0)):
        raise ValueError("mass matrix has a non-positive diagonal entry (assembly bug)")
    return 1.0 / d


def dump_operator(M, path) -> None:
    """Write an operator in Matrix Market coordinate format."""
    if isinstance(M, BandedMatrix):
        M = M.to_sparse()
    scipy.io.mmwrite(str(path), sp.coo_matrix(M))
