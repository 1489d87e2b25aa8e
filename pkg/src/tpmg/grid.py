"""Extruded tensor-product grids and their horizontal semi-coarsening hierarchy.

Horizontal cells form a doubly periodic ``nx x ny`` quadrilateral grid; each
horizontal cell carries a vertical column of ``nz`` layers.  Columns are
numbered with ``i`` running fastest, and cells are numbered column by column
so that all cells of one column are contiguous in memory.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ExtrudedGrid:
    nx: int
    ny: int
    nz: int
    Lx: float
    Ly: float
    H: float

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("Lx", "Ly", "H"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def dz(self) -> float:
        return self.H / self.nz

    @property
    def n_columns(self) -> int:
        return self.nx * self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.dz

    @property
    def aspect_ratio(self) -> float:
        """dz/dx; the vertical anisotropy of the cells."""
        return self.dz / self.dx

    def column_index(self, i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        if np.any((i < 0) | (i >= self.nx)) or np.any((j < 0) | (j >= self.ny)):
            raise IndexError(f"column ({i}, {j}) outside {self.nx}x{self.ny} grid")
        out = i + self.nx * j
        return int(out) if out.ndim == 0 else out

    def column_ij(self, column):
        column = np.asarray(column)
        if np.any((column < 0) | (column >= self.n_columns)):
            raise IndexError(f"column {column} outside range [0, {self.n_columns})")
        i, j = column % self.nx, column // self.nx
        if i.ndim == 0:
            return int(i), int(j)
        return i, j

    def cell_of(self, column, k):
        column = np.asarray(column)
        k = np.asarray(k)
        if np.any((column < 0) | (column >= self.n_columns)):
            raise IndexError(f"column {column} outside range [0, {self.n_columns})")
        if np.any((k < 0) | (k >= self.nz)):
            raise IndexError(f"layer {k} outside range [0, {self.nz})")
        out = column * self.nz + k
        return int(out) if out.ndim == 0 else out

    def cell_location(self, cell):
        """Inverse of :meth:`cell_of`: cell id -> (column, k)."""
        cell = np.asarray(cell)
        if np.any((cell < 0) | (cell >= self.n_cells)):
            raise IndexError(f"cell {cell} outside range [0, {self.n_cells})")
        column, k = cell // self.nz, cell % self.nz
        if column.ndim == 0:
            return int(column), int(k)
        return column, k

    def neighbour_columns(self, column):
        """Periodic (west, east, south, north) neighbours of a column."""
        i, j = self.column_ij(column)
        nx, ny = self.nx, self.ny
        return (
            self.column_index((i - 1) % nx, j),
            self.column_index((i + 1) % nx, j),
            self.column_index(i, (j - 1) % ny),
            self.column_index(i, (j + 1) % ny),
        )

    def cell_centres(self):
        """Arrays (x, y, z) of cell centre coordinates in cell-id order."""
        col = np.arange(self.n_columns)
        i, j = col % self.nx, col // self.nx
        k = np.arange(self.nz)
        x = np.repeat((i + 0.5) * self.dx, self.nz)
        y = np.repeat((j + 0.5) * self.dy, self.nz)
        z = np.tile((k + 0.5) * self.dz, self.n_columns)
        return x, y, z

    def coarsened(self) -> "ExtrudedGrid":
        if self.nx % 2 or self.ny % 2:
            raise ValueError(f"cannot halve {self.nx}x{self.ny} horizontal grid")
        return ExtrudedGrid(self.nx // 2, self.ny // 2, self.nz, self.Lx, self.Ly, self.H)


@dataclass(frozen=True)
class GridHierarchy:
    """Horizontally semi-coarsened grids, ``levels[0]`` is the coarsest."""

    levels: tuple
    _parents: tuple = field(repr=False, default=())

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, item):
        return self.levels[item]

    @property
    def finest(self) -> ExtrudedGrid:
        return self.levels[-1]

    @property
    def coarsest(self) -> ExtrudedGrid:
        return self.levels[0]

    def parent_columns(self, level: int) -> np.ndarray:
        """Coarse column on ``level - 1`` of every column on ``level``."""
        if not 1 <= level < len(self.levels):
            raise IndexError(f"level {level} has no coarser parent level")
        return self._parents[level - 1]

    def children_columns(self, level: int) -> np.ndarray:
        """(n_coarse_columns, 4) fine columns on ``level + 1`` of each column on ``level``."""
        if not 0 <= level < len(self.levels) - 1:
            raise IndexError(f"level {level} has no finer child level")
        coarse, fine = self.levels[level], self.levels[level + 1]
        ic, jc = coarse.column_ij(np.arange(coarse.n_columns))
        kids = [fine.column_index(2 * ic + a, 2 * jc + b) for b in (0, 1) for a in (0, 1)]
        return np.stack(kids, axis=1)


def build_hierarchy(nx, ny, nz, Lx, Ly, H, n_levels: int) -> GridHierarchy:
    if n_levels < 1:
        raise ValueError(f"n_levels must be >= 1, got {n_levels}")
    factor = 2 ** (n_levels - 1)
    for name, n in (("nx", nx), ("ny", ny)):
        if n % factor:
            raise ValueError(
                f"{name}={n} is not divisible by 2**(n_levels-1)={factor} "
                f"required for {n_levels} levels"
            )
    grids = [ExtrudedGrid(nx, ny, nz, Lx, Ly, H)]
    for _ in range(n_levels - 1):
        grids.append(grids[-1].coarsened())
    grids.reverse()

    parents = []
    for fine, coarse in zip(grids[1:], grids[:-1]):
        col = np.arange(fine.n_columns)
        i, j = col % fine.nx, col // fine.nx
        parents.append(coarse.column_index(i // 2, j // 2))
    return GridHierarchy(tuple(grids), tuple(parents))


def max_levels(nx: int, ny: int, min_cells: int = 2) -> int:
    """Largest level count whose coarsest grid still has >= ``min_cells`` per direction."""
    n = 1
    while nx % 2 == 0 and ny % 2 == 0 and nx // 2 >= min_cells and ny // 2 >= min_cells:
        nx //= 2
        ny //= 2
        n += 1
    return n


def levels_for_courant(nx: int, ny: int, nu_cfl: float) -> int:
    """Level count from the correlation-length rule.

    Coarsen until the coarsest spacing exceeds ``nu_cfl`` fine cells, capped at
    the 2x2 coarsest grid.
    """
    cap = max_levels(nx, ny)
    n = 1
    while 2 ** (n - 1) <= nu_cfl and n < cap:
        n += 1
    return n
