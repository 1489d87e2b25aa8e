"""Quadrature oracle for the lowest-order spaces.

Every basis function is evaluated globally from its definition (periodic hat
functions times indicators) and integrated with tensor Gauss rules, without
reference to element connectivity.
"""
import itertools

import numpy as np

from tpmg.grid import ExtrudedGrid


def _wrap(d, L):
    return (d + 0.5 * L) % L - 0.5 * L


def _hat(x, centre, h, L=None):
    d = x - centre if L is None else _wrap(x - centre, L)
    val = np.clip(1.0 - np.abs(d) / h, 0.0, None)
    slope = np.where(np.abs(d) < h, -np.sign(d) / h, 0.0)
    return val, slope


def _in(x, lo, h):
    return ((x >= lo) & (x < lo + h)).astype(float)


def quadrature_points(g: ExtrudedGrid, n=2):
    s, w = np.polynomial.legendre.leggauss(n)
    s, w = 0.5 * (s + 1), 0.5 * w
    pts, wts, owner = [], [], []
    for col in range(g.n_columns):
        i, j = g.column_ij(col)
        for k in range(g.nz):
            for (a, wa), (b, wb), (c, wc) in itertools.product(zip(s, w), repeat=3):
                pts.append(((i + a) * g.dx, (j + b) * g.dy, (k + c) * g.dz))
                wts.append(wa * wb * wc * g.cell_volume)
                owner.append(g.cell_of(col, k))
    return np.array(pts), np.array(wts), np.array(owner)


def velocity_basis(g: ExtrudedGrid, X):
    """(n_dofs, n_pts, 3) values and (n_dofs, n_pts) divergences, in W2h then W2z order."""
    x, y, z = X.T
    vals, divs = [], []
    n2h = 2 * g.nz
    for col in range(g.n_columns):
        i, j = g.column_ij(col)
        for loc in range(n2h):
            d, k = divmod(loc, g.nz)
            v = np.zeros((len(x), 3))
            if d == 0:
                phi, dphi = _hat(x, i * g.dx, g.dx, g.Lx)
                ind = _in(y, j * g.dy, g.dy) * _in(z, k * g.dz, g.dz)
                v[:, 0] = phi * ind
            else:
                phi, dphi = _hat(y, j * g.dy, g.dy, g.Ly)
                ind = _in(x, i * g.dx, g.dx) * _in(z, k * g.dz, g.dz)
                v[:, 1] = phi * ind
            vals.append(v)
            divs.append(dphi * ind)
    for col in range(g.n_columns):
        i, j = g.column_ij(col)
        for loc in range(g.nz - 1):
            psi, dpsi = _hat(z, (loc + 1) * g.dz, g.dz)
            ind = _in(x, i * g.dx, g.dx) * _in(y, j * g.dy, g.dy)
            v = np.zeros((len(x), 3))
            v[:, 2] = psi * ind
            vals.append(v)
            divs.append(dpsi * ind)
    return np.array(vals), np.array(divs)


def scalar_basis_b(g: ExtrudedGrid, X):
    x, y, z = X.T
    out = []
    for col in range(g.n_columns):
        i, j = g.column_ij(col)
        for loc in range(g.nz - 1):
            psi, _ = _hat(z, (loc + 1) * g.dz, g.dz)
            out.append(psi * _in(x, i * g.dx, g.dx) * _in(y, j * g.dy, g.dy))
    return np.array(out)


def pressure_basis(g: ExtrudedGrid, owner):
    return (owner[None, :] == np.arange(g.n_cells)[:, None]).astype(float)
