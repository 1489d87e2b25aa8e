import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tpmg import perf
from tpmg.grid import build_hierarchy
from tpmg.mgprec import MGConfig, MultigridSolver, build_levels
from tpmg.system import PhysicsParams


def test_banded_apply_bytes():
    assert perf.bytes_banded_apply(64, 3) == 2560
    assert perf.bytes_banded_apply(1, 1) == 24
    assert perf.bytes_tridiagonal_solve(64) == perf.bytes_banded_apply(64, 3)


def test_lu_solve_bytes():
    assert perf.bytes_banded_lu_solve(384, 27) == 130560
    assert perf.bytes_banded_lu_solve(1, 1) == 28


@given(st.integers(1, 10**6), st.integers(1, 200))
def test_lu_solve_bytes_identity(m, n_bw):
    assert 2 * perf.bytes_banded_lu_solve(m, n_bw) == 3 * m * (n_bw + 1) * 8 + 2 * 4 * m


def test_csr_bytes():
    assert perf.bytes_csr_apply(1, 1) == 32
    assert perf.bytes_csr_apply(2, 4) == 88
    # arithmetic intensity tends to 1/6 flop per byte
    n = 10**9
    assert perf.flops_csr_apply(n) / perf.bytes_csr_apply(1, n) == pytest.approx(1 / 6, rel=1e-6)


@given(st.integers(0, 10**7), st.integers(0, 10**8))
def test_csr_bytes_formula(M, N):
    assert perf.bytes_csr_apply(M, N) == 20 * M + 12 * N


def test_useful_bandwidth():
    assert perf.useful_bandwidth(2560, 1, 1e-6) == pytest.approx(2.56e9)
    # two equal halves give the same bandwidth as the whole
    whole = perf.useful_bandwidth(2560, 100, 2e-3)
    c = perf.KernelCounters()
    c.record("k", 2560 * 50, 0, 1e-3)
    c.record("k", 2560 * 50, 0, 1e-3)
    assert c.useful_bandwidth("k") == pytest.approx(whole)
    with pytest.raises(ValueError):
        perf.useful_bandwidth(1, 1, 0.0)


def test_machine_model():
    m = perf.ARCHER_NODE
    assert m.balance == pytest.approx(518.4 / 74.1)
    assert 4 <= m.balance <= 10
    with pytest.raises(ValueError):
        perf.MachineModel(0.0, 1.0)


def test_mf_vs_mx_ratio():
    m = perf.ARCHER_NODE
    assert perf.mf_vs_mx_ratio(4.8e10, 2.9e9, m) == pytest.approx(2.37, abs=0.05)
    assert perf.mf_vs_mx_ratio(4.6e10, 4.5e9, m) == pytest.approx(1.46, abs=0.05)
    unit = perf.MachineModel(2.0, 2.0)
    assert perf.mf_vs_mx_ratio(3.0, 3.0, unit) == 1.0


def test_breakeven():
    assert perf.breakeven_applications(1.094, 0.053, 0.235) == 7
    assert perf.breakeven_applications(1.577, 0.054, 0.263) == 8
    assert perf.breakeven_applications(0.0, 0.053, 0.235) == 1
    assert perf.breakeven_applications(1.0, 0.3, 0.2) == 0


@given(st.floats(0, 100), st.floats(1e-3, 1), st.floats(1e-3, 1))
def test_breakeven_is_smallest(t_a, t_mx, t_mf):
    n = perf.breakeven_applications(t_a, t_mx, t_mf)
    if t_mf <= t_mx:
        assert n == 0
        return
    assert t_a + n * t_mx <= n * t_mf
    if n > 1:
        assert t_a + (n - 1) * t_mx > (n - 1) * t_mf


def test_counters_roundtrip_merge_reset():
    c = perf.KernelCounters()
    with c.timed(perf.HZ_APPLY, 100, 10):
        pass
    c.record(perf.HZ_APPLY, 50, 5, 0.5)
    s = c[perf.HZ_APPLY]
    assert (s.calls, s.bytes_model, s.flops_model) == (2, 150, 15)
    d = perf.KernelCounters.from_dict(c.to_dict())
    assert d.to_dict() == c.to_dict()
    d.merge(c)
    assert d[perf.HZ_APPLY].calls == 4
    c.reset()
    assert c.to_dict() == {} and c[perf.HZ_APPLY].calls == 0


def test_counters_thread_safe():
    c = perf.KernelCounters()

    def work():
        for _ in range(2000):
            c.record("t", 1, 1, 0.0)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert c["t"].calls == 16000 and c["t"].bytes_model == 16000


@pytest.mark.parametrize("cfg", [MGConfig(), MGConfig(n_pre=2, n_post=1, n_coarse=3)])
def test_vcycle_counter_conservation(cfg):
    h = build_hierarchy(16, 16, 8, 1.6e6, 1.6e6, 1.0e4, 3)
    levels = build_levels(h, PhysicsParams.from_courant(8.0, 1.0e5), cfg)
    mg = MultigridSolver(levels, cfg)
    mg.vcycle(np.ones(h.finest.n_cells))
    total = sum(L.counters.total_bytes() for L in levels)
    expect = 0
    for n, L in enumerate(levels):
        g = L.grid
        hz = perf.bytes_banded_apply(g.nz, 3) * g.n_columns
        hh = perf.bytes_csr_apply(g.n_cells, L.Hh.nnz)
        hinv = perf.bytes_tridiagonal_solve(g.nz) * g.n_columns
        if n == 0:
            expect += (cfg.n_coarse - 1) * (hz + hh) + cfg.n_coarse * hinv
        else:
            # the skipped first pre-smoothing apply is replaced by the residual apply
            expect += (cfg.n_pre + cfg.n_post) * (hz + hh + hinv)
    assert total == expect


def test_stream_triad_positive():
    bw = perf.measure_stream_triad(3 * 2**20, repeats=3)
    assert 1e8 < bw < 1e13
