import numpy as np
import pytest

from drdb import _kernels
from drdb.nuisance import LAMBDA_GRID, _penalty_mask

needs_numba = pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba not installed")


@pytest.fixture(params=[(50, 2), (400, 10), (1000, 25)], ids=lambda s: f"n{s[0]}p{s[1]}")
def problem(request):
    n, p = request.param
    rng = np.random.default_rng(n + p)
    x = rng.standard_normal((n, p))
    design = np.hstack([np.ones((n, 1)), x])
    labels = (rng.random(n) < 1 / (1 + np.exp(-x @ np.linspace(-1, 1, p) + 0.2))).astype(np.float64)
    y = design @ rng.standard_normal(p + 1) + rng.standard_normal(n)
    return design, labels, y


@needs_numba
def test_mean_and_ssd_parity(problem):
    _, _, y = problem
    m_np, s_np = _kernels.mean_and_ssd_np(y)
    m_nb, s_nb = _kernels.mean_and_ssd_nb(y)
    assert m_nb == pytest.approx(m_np, rel=1e-13, abs=1e-14)
    assert s_nb == pytest.approx(s_np, rel=1e-12)


@needs_numba
def test_logistic_newton_parity(problem):
    design, labels, _ = problem
    penalty = np.r_[1e-4, np.ones(design.shape[1] - 1)]
    b_np, h_np, g_np, _ = _kernels.logistic_newton_np(design, labels, penalty, 1e-8, 100)
    b_nb, h_nb, g_nb, _ = _kernels.logistic_newton_nb(design, labels, penalty, 1e-8, 100)
    assert g_np < 1e-8 and g_nb < 1e-8
    np.testing.assert_allclose(b_nb, b_np, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(h_nb, h_np, rtol=1e-8)


@needs_numba
def test_ridge_cv_parity(problem):
    design, _, y = problem
    folds = np.arange(design.shape[0]) % 5
    mask = _penalty_mask(design.shape[1])
    e_np = _kernels.ridge_cv_errors_np(design, y, mask, LAMBDA_GRID, folds, 5)
    e_nb = _kernels.ridge_cv_errors_nb(design, y, mask, LAMBDA_GRID, folds, 5)
    np.testing.assert_allclose(e_nb, e_np, rtol=1e-9)


def test_backend_reflects_flag():
    assert _kernels.backend() == ("numba" if _kernels.USE_NUMBA else "numpy")


def test_env_flag_selects_numpy(monkeypatch):
    import importlib

    monkeypatch.setenv("DRDB_DISABLE_NUMBA", "1")
    mod = importlib.reload(_kernels)
    try:
        assert mod.backend() == "numpy"
        assert mod.logistic_newton is mod.logistic_newton_np
    finally:
        monkeypatch.delenv("DRDB_DISABLE_NUMBA")
        importlib.reload(_kernels)
