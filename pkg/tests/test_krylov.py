import numpy as np
import pytest

from tpmg.experiments import parse_config, run_solve
from tpmg.krylov import KrylovConfig, SolveReport, arnoldi, gmres


def matvec(A):
    return lambda v: A @ v


def test_config_defaults_and_validation():
    cfg = KrylovConfig()
    assert (cfg.restart, cfg.rtol) == (30, 1e-5)
    for kw in (dict(restart=0), dict(rtol=0.0), dict(rtol=1.0), dict(max_iter=0)):
        with pytest.raises(ValueError):
            KrylovConfig(**kw)


def test_identity_one_iteration():
    b = np.arange(1.0, 6.0)
    x, rep = gmres(lambda v: v, b)
    assert rep.converged and rep.iterations == 1
    assert np.allclose(x, b, rtol=1e-15)


def test_two_by_two_example():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    x, rep = gmres(matvec(A), np.array([1.0, 2.0]), cfg=KrylovConfig(rtol=1e-14))
    assert rep.iterations <= 2
    assert np.allclose(x, [1 / 11, 7 / 11], rtol=1e-13)


def test_zero_rhs():
    x, rep = gmres(lambda v: 2 * v, np.zeros(4))
    assert rep.converged and rep.iterations == 0 and not np.any(x)


@pytest.mark.parametrize("n", [1, 5, 20, 50, 100, 200])
@pytest.mark.parametrize("kind", ["nonsymmetric", "spd"])
def test_exact_in_n_iterations(n, kind):
    rng = np.random.default_rng(n)
    A = rng.standard_normal((n, n))
    if kind == "spd":
        A = A @ A.T / n + 0.1 * np.eye(n)
    b = rng.standard_normal(n)
    x, rep = gmres(matvec(A), b, cfg=KrylovConfig(restart=n, rtol=1e-12, max_iter=n))
    assert rep.converged and rep.iterations <= n
    assert np.linalg.norm(b - A @ x) <= 1e-11 * np.linalg.norm(b)


@pytest.mark.parametrize("n", [10, 80, 200])
def test_arnoldi_orthogonality(n):
    rng = np.random.default_rng(100 + n)
    A = rng.standard_normal((n, n))
    P = np.diag(rng.uniform(0.5, 2.0, n))
    k = min(n - 1, 40)
    V, H = arnoldi(matvec(A), rng.standard_normal(n), k, matvec(P))
    assert np.abs(V.T @ V - np.eye(V.shape[1])).max() <= 1e-10
    # Arnoldi relation A P V_k = V_{k+1} H
    assert np.allclose(A @ P @ V[:, :k], V @ H, atol=1e-10)


def test_arnoldi_breakdown():
    V, H = arnoldi(lambda v: v, np.ones(6), 4)
    assert V.shape == (6, 1) and H.shape == (1, 1)


def test_true_residual_reported():
    rng = np.random.default_rng(3)
    n = 150
    A = np.eye(n) * 4 + rng.standard_normal((n, n)) / np.sqrt(n)
    Minv = np.diag(1.0 / np.diag(A))
    b = rng.standard_normal(n)
    x, rep = gmres(matvec(A), b, matvec(Minv), KrylovConfig(restart=10, rtol=1e-8))
    assert rep.converged
    true = np.linalg.norm(b - A @ x)
    assert abs(rep.final_residual - true) <= 1e-12 * true
    assert rep.relative_residual <= 1e-8


def test_restarts_and_nonconvergence():
    rng = np.random.default_rng(4)
    n = 60
    A = rng.standard_normal((n, n))
    b = rng.standard_normal(n)
    x, rep = gmres(matvec(A), b, cfg=KrylovConfig(restart=5, rtol=1e-10, max_iter=25))
    assert not rep.converged
    assert rep.iterations == 25
    assert len(rep.residuals) == 26
    assert rep.final_residual == pytest.approx(np.linalg.norm(b - A @ x), rel=1e-12)


def test_right_preconditioning_exact_inverse():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((30, 30)) + 10 * np.eye(30)
    Ainv = np.linalg.inv(A)
    x, rep = gmres(matvec(A), rng.standard_normal(30), matvec(Ainv))
    assert rep.iterations == 1


def test_callback_and_history_csv():
    seen = []
    A = np.diag([1.0, 2.0, 3.0])
    x, rep = gmres(matvec(A), np.ones(3), cfg=KrylovConfig(rtol=1e-12), callback=lambda i, r: seen.append(i))
    assert seen == list(range(1, rep.iterations + 1))
    lines = rep.history_csv().splitlines()
    assert lines[0] == "iter,resnorm"
    assert len(lines) == rep.iterations + 2
    assert float(lines[-1].split(",")[1]) == rep.final_residual


def test_report_dict():
    rep = SolveReport(iterations=3, residuals=[1.0, 0.5, 0.1, 1e-6], converged=True, wall_time=2.0,
                      t_setup=1.0, t_iter=0.5)
    d = rep.to_dict()
    assert d["n_iter"] == 3 and d["t_total"] == 3.0 and d["relative_residual"] == 1e-6


def test_gravity_wave_repeatable():
    cfg = parse_config({"grid": {"nx": 16, "ny": 16, "nz": 16, "Lx": 1.44e6, "Ly": 1.44e6}})
    counts = [run_solve(cfg).report for _ in range(3)]
    assert all(r.converged for r in counts)
    its = [r.iterations for r in counts]
    assert max(its) - min(its) <= 1
