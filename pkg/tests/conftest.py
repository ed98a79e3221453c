"""Shared brute-force oracles.

Nothing here calls into the per-site or factorised code paths of the
package; every oracle works from explicit dense matrices.
"""

import math

import numpy as np
import pytest
from scipy import integrate

from vecchia_infill.gp import distance_matrix
from vecchia_infill.matern import matern_cov

ACCEPTANCE_LINES = []


def bessel_k_quadrature(nu, x):
    """K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt, peak-shifted for range."""
    nu = abs(nu)
    t_peak = math.asinh(nu / x) if nu > 0 else 0.0
    shift = -x * math.cosh(t_peak) + nu * t_peak

    def f(t):
        a = -x * math.cosh(t) - shift
        return 0.5 * (math.exp(a + nu * t) + math.exp(a - nu * t))

    upper = t_peak + 1.0
    while -x * math.cosh(upper) + nu * upper - shift > -60.0:
        upper += 1.0
    pts = [t_peak] if 0 < t_peak < upper else None
    val, _ = integrate.quad(f, 0.0, upper, points=pts, epsabs=0.0, epsrel=1e-13, limit=500)
    return val * math.exp(shift)


def dense_cov(params, points):
    return matern_cov(params, distance_matrix(np.atleast_2d(points)))


def dense_loglik(cov, y):
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * (y.size * math.log(2 * math.pi) + logdet + y @ np.linalg.solve(cov, y))


def brute_weights(cov, target, cond):
    """Kriging weights and unit conditional variance by an explicit solve."""
    cond = list(cond)
    if not cond:
        return np.empty(0), cov[target, target]
    s22 = cov[np.ix_(cond, cond)]
    s21 = cov[cond, target]
    w = np.linalg.solve(s22, s21)
    return w, cov[target, target] - s21 @ w


def brute_error_moment(weight_cov, eval_cov, target, cond):
    """E_eval (y_t - w^T y_S)^2 with w from weight_cov, by an explicit quadratic form."""
    n = weight_cov.shape[0]
    w, _ = brute_weights(weight_cov, target, cond)
    a = np.zeros(n)
    a[target] = 1.0
    a[list(cond)] -= w
    return a @ eval_cov @ a


def brute_residual_vector(weight_cov, target, cond):
    n = weight_cov.shape[0]
    w, _ = brute_weights(weight_cov, target, cond)
    a = np.zeros(n)
    a[target] = 1.0
    a[list(cond)] -= w
    return a


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
