"""Numeric inner loops, compiled with numba when available.

Every kernel exists twice: a plain numpy version (``*_np``) and a loop
version compiled with ``numba.njit`` (``*_nb``). The public names bound at
the bottom of this module point at the compiled versions unless numba is
missing or ``DRDB_DISABLE_NUMBA`` is set to a truthy value before import.
Both paths agree to rounding error; ``benchmarks/bench_kernels.py`` times
them against each other.
"""

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def _env_disabled():
    return os.environ.get("DRDB_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAS_NUMBA and not _env_disabled()

# Relative slack in the line-search acceptance test. Near the optimum the
# Newton decrease falls below the rounding error of the summed objective.
LOSS_SLACK = 1e-12


# --------------------------------------------------------------------------
# numpy reference versions
# --------------------------------------------------------------------------

def mean_and_ssd_np(values):
    """Two-pass mean and sum of squared deviations."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.sum() / values.shape[0]
    dev = values - mean
    return mean, float(dev @ dev)


def _softplus_np(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logistic_newton_np(design, labels, penalty, tol, max_iter):
    """Damped Newton for ridge-penalised logistic regression.

    Minimises ``sum(softplus(D b) - t * D b) + 0.5 * sum(penalty * b**2)``.
    Returns ``(coef, hessian, grad_norm, iterations)``; ``iterations`` equal
    to ``max_iter`` with ``grad_norm >= tol`` means the cap was hit.
    """
    n, q = design.shape
    beta = np.zeros(q)

    def objective(b):
        eta = design @ b
        return _softplus_np(eta).sum() - labels @ eta + 0.5 * (penalty * b) @ b

    loss = objective(beta)
    grad_norm = np.inf
    hess = np.zeros((q, q))
    it = 0
    for it in range(max_iter + 1):
        eta = design @ beta
        mu = _sigmoid_np(eta)
        grad = design.T @ (mu - labels) + penalty * beta
        weights = mu * (1.0 - mu)
        hess = (design.T * weights) @ design
        hess[np.diag_indices(q)] += penalty
        grad_norm = float(np.sqrt(grad @ grad))
        if grad_norm < tol or it == max_iter:
            break
        step = np.linalg.solve(hess, grad)
        scale = 1.0
        for _ in range(60):
            trial = beta - scale * step
            trial_loss = objective(trial)
            if trial_loss <= loss + LOSS_SLACK * (1.0 + abs(loss)):
                break
            scale *= 0.5
        beta = trial
        loss = trial_loss
    return beta, hess, grad_norm, it


def ridge_cv_errors_np(design, y, penalty_mask, lambdas, fold_ids, n_folds):
    """Summed squared validation error of the ridge mean for each penalty."""
    gram = design.T @ design
    cross = design.T @ y
    errors = np.zeros(lambdas.shape[0])
    for f in range(n_folds):
        held = fold_ids == f
        d_out = design[held]
        y_out = y[held]
        g_in = gram - d_out.T @ d_out
        c_in = cross - d_out.T @ y_out
        for j, lam in enumerate(lambdas):
            coef = np.linalg.solve(g_in + np.diag(lam * penalty_mask), c_in)
            resid = y_out - d_out @ coef
            errors[j] += resid @ resid
    return errors


# --------------------------------------------------------------------------
# numba versions
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def mean_and_ssd_nb(values):
        n = values.shape[0]
        total = 0.0
        for i in range(n):
            total += values[i]
        mean = total / n
        ss = 0.0
        for i in range(n):
            d = values[i] - mean
            ss += d * d
        return mean, ss

    @numba.njit(cache=True)
    def _softplus_nb(x):
        if x > 0.0:
            return x + np.log1p(np.exp(-x))
        return np.log1p(np.exp(x))

    @numba.njit(cache=True)
    def _sigmoid_nb(x):
        if x >= 0.0:
            return 1.0 / (1.0 + np.exp(-x))
        ex = np.exp(x)
        return ex / (1.0 + ex)

    @numba.njit(cache=True)
    def _logistic_objective_nb(design, labels, penalty, beta):
        n, q = design.shape
        total = 0.0
        for i in range(n):
            eta = 0.0
            for j in range(q):
                eta += design[i, j] * beta[j]
            total += _softplus_nb(eta) - labels[i] * eta
        for j in range(q):
            total += 0.5 * penalty[j] * beta[j] * beta[j]
        return total

    @numba.njit(cache=True)
    def logistic_newton_nb(design, labels, penalty, tol, max_iter):
        n, q = design.shape
        beta = np.zeros(q)
        loss = _logistic_objective_nb(design, labels, penalty, beta)
        grad = np.zeros(q)
        hess = np.zeros((q, q))
        grad_norm = np.inf
        it = 0
        for it in range(max_iter + 1):
            grad[:] = 0.0
            hess[:, :] = 0.0
            for i in range(n):
                eta = 0.0
                for j in range(q):
                    eta += design[i, j] * beta[j]
                mu = _sigmoid_nb(eta)
                resid = mu - labels[i]
                w = mu * (1.0 - mu)
                for j in range(q):
                    dij = design[i, j]
                    grad[j] += dij * resid
                    wd = w * dij
                    for l in range(j + 1):
                        hess[j, l] += wd * design[i, l]
            ssq = 0.0
            for j in range(q):
                grad[j] += penalty[j] * beta[j]
                hess[j, j] += penalty[j]
                ssq += grad[j] * grad[j]
                for l in range(j):
                    hess[l, j] = hess[j, l]
            grad_norm = np.sqrt(ssq)
            if grad_norm < tol or it == max_iter:
                break
            step = np.linalg.solve(hess, grad)
            scale = 1.0
            trial = beta - step
            trial_loss = loss
            for _ in range(60):
                trial = beta - scale * step
                trial_loss = _logistic_objective_nb(design, labels, penalty, trial)
                if trial_loss <= loss + LOSS_SLACK * (1.0 + abs(loss)):
                    break
                scale *= 0.5
            beta = trial
            loss = trial_loss
        return beta, hess, grad_norm, it

    @numba.njit(cache=True)
    def ridge_cv_errors_nb(design, y, penalty_mask, lambdas, fold_ids, n_folds):
        n, q = design.shape
        gram = design.T @ design
        cross = design.T @ y
        errors = np.zeros(lambdas.shape[0])
        for f in range(n_folds):
            g_in = gram.copy()
            c_in = cross.copy()
            for i in range(n):
                if fold_ids[i] != f:
                    continue
                for j in range(q):
                    c_in[j] -= design[i, j] * y[i]
                    for l in range(q):
                        g_in[j, l] -= design[i, j] * design[i, l]
            for k in range(lambdas.shape[0]):
                system = g_in.copy()
                for j in range(q):
                    system[j, j] += lambdas[k] * penalty_mask[j]
                coef = np.linalg.solve(system, c_in)
                for i in range(n):
                    if fold_ids[i] != f:
                        continue
                    pred = 0.0
                    for j in range(q):
                        pred += design[i, j] * coef[j]
                    r = y[i] - pred
                    errors[k] += r * r
        return errors


if USE_NUMBA:
    mean_and_ssd = mean_and_ssd_nb
    logistic_newton = logistic_newton_nb
    ridge_cv_errors = ridge_cv_errors_nb
else:
    mean_and_ssd = mean_and_ssd_np
    logistic_newton = logistic_newton_np
    ridge_cv_errors = ridge_cv_errors_np


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"
