import numpy as np
import pytest
import scipy.io
import scipy.sparse.linalg as sla
import sympy

from fem_oracle import pressure_basis, quadrature_points, scalar_basis_b, velocity_basis
from tpmg import fem
from tpmg.grid import ExtrudedGrid


@pytest.fixture(scope="module")
def small():
    g = ExtrudedGrid(3, 2, 4, 3.0, 1.0, 0.2)
    ops = fem.assemble_all(g)
    X, w, owner = quadrature_points(g)
    U, divU = velocity_basis(g, X)
    B = scalar_basis_b(g, X)
    P = pressure_basis(g, owner)
    oracle = {
        "M2": np.einsum("apd,bpd,p->ab", U, U, w),
        "D": np.einsum("cp,bp,p->cb", P, divU, w),
        "M3": np.einsum("ap,bp,p->ab", P, P, w),
        "Mb": np.einsum("ap,bp,p->ab", B, B, w),
        "Q": np.einsum("ap,bp,p->ab", U[:, :, 2], B, w),
    }
    return g, ops, oracle


def test_p1_mass_symbolic():
    s = sympy.symbols("s")
    phi = [1 - s, s]
    M = [[sympy.integrate(a * b, (s, 0, 1)) for b in phi] for a in phi]
    assert M == [[sympy.Rational(1, 3), sympy.Rational(1, 6)], [sympy.Rational(1, 6), sympy.Rational(1, 3)]]
    assert np.array_equal(fem.P1_MASS, np.array(M, dtype=float))
    d = [sympy.integrate(sympy.diff(a, s), (s, 0, 1)) for a in phi]
    assert np.array_equal(fem.P1_DIV, np.array(d, dtype=float))


def test_m2_matches_quadrature(small):
    g, ops, oracle = small
    assert np.allclose(ops.M2.toarray(), oracle["M2"], rtol=0, atol=1e-14 * np.abs(oracle["M2"]).max())


def test_d_matches_quadrature(small):
    g, ops, oracle = small
    assert np.allclose(ops.D.toarray(), oracle["D"], rtol=0, atol=1e-13 * np.abs(oracle["D"]).max())


def test_m3_mb_q_match_quadrature(small):
    g, ops, oracle = small
    assert np.allclose(ops.M3.to_sparse().toarray(), oracle["M3"], atol=1e-15)
    scale = np.abs(oracle["Mb"]).max()
    assert np.allclose(ops.Mb.to_sparse().toarray(), oracle["Mb"], atol=1e-14 * scale)
    Qz = oracle["Q"][ops.layouts.W2h.size:]
    assert not np.any(oracle["Q"][: ops.layouts.W2h.size])
    assert np.allclose(ops.Q_full.toarray()[ops.layouts.W2h.size:], Qz, atol=1e-14 * scale)


def test_layout_counts_example():
    g = ExtrudedGrid(1, 1, 2, 1.0, 1.0, 1.0)
    L = fem.build_layouts(g)
    assert (L.W3.size, L.W2z.size, L.Wb.size, L.W2h.size) == (2, 1, 1, 4)
    L64 = fem.build_layouts(ExtrudedGrid(2, 2, 64, 1.0, 1.0, 1.0))
    assert L64.W3.dofs_per_column == 64
    # quads: 2 horizontal + (nz-1)/nz vertical + 1 pressure per cell
    assert L64.dofs_per_cell(64) == pytest.approx(4 - 1 / 64)


def test_degenerate_vertical_warns():
    with pytest.warns(UserWarning, match="nz=1"):
        L = fem.build_layouts(ExtrudedGrid(2, 2, 1, 1.0, 1.0, 1.0))
    assert L.W2z.size == 0


def test_layout_index_and_columns():
    L = fem.build_layouts(ExtrudedGrid(2, 2, 3, 1.0, 1.0, 1.0))
    assert L.W3.index(2, 1) == 7
    with pytest.raises(IndexError):
        L.W3.index(0, 3)
    v = np.arange(12.0)
    assert L.W3.columns(v)[1].tolist() == [3.0, 4.0, 5.0]
    with pytest.raises(ValueError):
        L.W3.columns(np.zeros(5))


def test_unit_cell_m3():
    ops = fem.assemble_all(ExtrudedGrid(2, 2, 2, 2.0, 2.0, 2.0))
    assert np.all(ops.M3_diag == 1.0)


def test_m2z_interior_row():
    g = ExtrudedGrid(2, 2, 6, 2.0, 4.0, 0.3)
    ops = fem.assemble_all(g)
    blk = ops.M2z.column_block(0)
    vol = g.cell_volume
    assert np.allclose(blk[2, 1:4], np.array([1 / 6, 2 / 3, 1 / 6]) * vol, rtol=1e-15)
    assert ops.Dz.pattern.shape == (6, 5)


def test_dz_zero_field():
    ops = fem.assemble_all(ExtrudedGrid(2, 2, 4, 1.0, 1.0, 1.0))
    assert not np.any(ops.Dz.apply(np.zeros(ops.layouts.W2z.size)))


@pytest.mark.parametrize("shape", [(2, 2, 2), (4, 3, 3), (8, 8, 8)])
def test_masses_spd(shape):
    g = ExtrudedGrid(*shape, 1.0, 2.0, 0.1)
    ops = fem.assemble_all(g)
    for M in (ops.M2h.toarray(), ops.M2z.to_sparse().toarray(), ops.M3.to_sparse().toarray(),
              ops.Mb.to_sparse().toarray()):
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M).min() > 0


def test_adjoint_consistency():
    ops = fem.assemble_all(ExtrudedGrid(3, 4, 5, 1.0, 1.0, 1.0))
    assert (ops.D.T.T != ops.D).nnz == 0
    DzT = ops.Dz.T.to_sparse()
    assert (DzT != ops.Dz_sparse.T).nnz == 0


def test_solenoidal_fields_annihilated():
    rng = np.random.default_rng(3)
    g = ExtrudedGrid(6, 5, 4, 3.0, 2.0, 0.5)
    ops = fem.assemble_all(g)
    nx, ny, nz = g.nx, g.ny, g.nz
    uh = np.zeros((ny, nx, 2, nz))
    # horizontal stream function on vertices, independent per layer
    psi = rng.standard_normal((ny, nx, nz))
    uh[:, :, 0] = (np.roll(psi, -1, axis=0) - psi) / g.dy
    uh[:, :, 1] = -(np.roll(psi, -1, axis=1) - psi) / g.dx
    # x-z stream function on (x-facet, level), zero at top and bottom
    chi = np.zeros((ny, nx, nz + 1))
    chi[:, :, 1:-1] = rng.standard_normal((ny, nx, nz - 1))
    uh[:, :, 0] += np.diff(chi, axis=2) / g.dz
    w = -(np.roll(chi, -1, axis=1) - chi)[:, :, 1:-1] / g.dx
    u = np.concatenate([uh.ravel(), w.ravel()])
    div = ops.D @ u
    assert np.abs(div).max() <= 1e-12 * np.abs(ops.D).max() * np.abs(u).max()


def test_constant_horizontal_flux_divergence_free():
    g = ExtrudedGrid(4, 4, 3, 1.0, 1.0, 1.0)
    ops = fem.assemble_all(g)
    assert np.abs(ops.Dh @ np.ones(ops.layouts.W2h.size)).max() < 1e-15


def test_lump_examples():
    assert np.array_equal(fem.lump(np.eye(3)), np.ones(3))
    assert np.array_equal(fem.lump(np.diag([2.0, 4.0])), [0.5, 0.25])
    with pytest.raises(ValueError, match="non-positive"):
        fem.lump(np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        fem.lump(np.diag([1.0, -2.0]))


def _lumped_condition(ops):
    M = ops.M2
    d = 1.0 / np.sqrt(M.diagonal())
    S = M.multiply(d[:, None]).multiply(d[None, :]).tocsc()
    hi = sla.eigsh(S, k=1, which="LA", return_eigenvectors=False)[0]
    lo = sla.eigsh(S, k=1, sigma=0.0, which="LM", return_eigenvectors=False)[0]
    return hi / lo


def test_lumped_mass_condition_mesh_independent():
    kappa = [_lumped_condition(fem.assemble_all(ExtrudedGrid(n, n, 4, 1.0, 1.0, 0.01)))
             for n in (8, 16, 32)]
    assert all(1 < k < 10 for k in kappa)
    assert max(kappa) / min(kappa) <= 1.5


def test_dump_operator_roundtrip(tmp_path):
    ops = fem.assemble_all(ExtrudedGrid(2, 2, 3, 1.0, 1.0, 1.0))
    for name, M in (("dh", ops.Dh), ("m2z", ops.M2z)):
        path = tmp_path / f"{name}.mtx"
        fem.dump_operator(M, path)
        back = scipy.io.mmread(str(path)).toarray()
        ref = M.toarray() if hasattr(M, "toarray") else M.to_sparse().toarray()
        assert np.array_equal(back, ref)
