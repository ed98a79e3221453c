import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from conftest import bessel_k_quadrature
from vecchia_infill.bessel import UNDERFLOW_X, bessel_k, bessel_k_scaled
from vecchia_infill.matern import (
    KernelParams,
    MicroergodicValue,
    calibrate_phi,
    equivalent_sigma2,
    matern_corr,
    matern_cov,
    microergodic,
    spectral_density,
)

NU_GRID = [0.25, 0.5, 1.0, 1.5, 2.0]


# ---- bessel_k ------------------------------------------------------------


def test_bessel_half_order_at_one():
    assert bessel_k(0.5, 1.0) == pytest.approx(math.sqrt(math.pi / 2) * math.exp(-1), rel=1e-13)
    assert bessel_k(0.5, 1.0) == pytest.approx(0.4610685044, abs=1e-10)


def test_bessel_three_halves_at_two():
    expected = math.sqrt(math.pi / 4) * math.exp(-2) * 1.5
    assert bessel_k(1.5, 2.0) == pytest.approx(expected, rel=1e-13)
    assert bessel_k(1.5, 2.0) == pytest.approx(0.1799066579, abs=1e-10)


def test_bessel_quarter_order_vs_quadrature():
    assert bessel_k(0.25, 1.0) == pytest.approx(bessel_k_quadrature(0.25, 1.0), rel=1e-10)


@pytest.mark.parametrize("nu", [0.01, 0.1, 0.25, 0.4, 0.5, 0.75, 1.0, 1.3, 2.0, 2.7, 3.5, 4.49, 5.0])
def test_bessel_against_quadrature_box(nu):
    xs = np.geomspace(1e-6, 50, 25)
    ours = bessel_k(nu, xs)
    oracle = np.array([bessel_k_quadrature(nu, x) for x in xs])
    np.testing.assert_allclose(ours, oracle, rtol=1e-10)


def test_bessel_against_scipy_dense_box():
    # scipy's Amos routines act as a second, independent reference
    nus = np.linspace(0.005, 5.0, 60)
    xs = np.geomspace(1e-6, 50, 80)
    worst = 0.0
    for nu in nus:
        worst = max(worst, np.max(np.abs(bessel_k(nu, xs) / special.kv(nu, xs) - 1)))
    assert worst < 1e-10


def test_bessel_symmetric_in_order():
    xs = np.array([1e-3, 0.7, 3.0, 40.0])
    for nu in (0.3, 1.0, 2.5):
        np.testing.assert_array_equal(bessel_k(-nu, xs), bessel_k(nu, xs))


def test_bessel_order_zero():
    xs = np.array([1e-4, 0.5, 2.0, 10.0])
    np.testing.assert_allclose(bessel_k(0.0, xs), special.k0(xs), rtol=1e-12)


def test_bessel_scaled_matches_unscaled():
    xs = np.array([0.01, 1.0, 5.0, 30.0])
    np.testing.assert_allclose(bessel_k_scaled(1.7, xs), np.exp(xs) * bessel_k(1.7, xs), rtol=1e-13)


def test_bessel_scaled_beyond_underflow():
    # unscaled value underflows past the threshold; the scaled one stays finite
    x = UNDERFLOW_X + 100.0
    assert bessel_k(1.2, x) == 0.0
    assert bessel_k_scaled(1.2, x) == pytest.approx(math.sqrt(math.pi / (2 * x)), rel=1e-2)


def test_bessel_scalar_returns_float():
    assert isinstance(bessel_k(1.0, 1.0), float)


@pytest.mark.parametrize("x", [0.0, -1.0, math.nan, math.inf])
def test_bessel_domain_errors(x):
    with pytest.raises(ValueError):
        bessel_k(1.0, x)


@settings(max_examples=60, deadline=None)
@given(nu=st.floats(0.05, 4.0), x=st.floats(0.01, 40.0))
def test_bessel_recurrence(nu, x):
    # K_{nu+1}(x) = K_{nu-1}(x) + (2 nu / x) K_nu(x)
    lhs = bessel_k(nu + 1, x)
    rhs = bessel_k(nu - 1, x) + 2 * nu / x * bessel_k(nu, x)
    assert lhs == pytest.approx(rhs, rel=1e-11)


# ---- matern_cov ----------------------------------------------------------


def test_matern_at_zero_is_sigma2():
    assert matern_cov(KernelParams(1.0, 10.7, 2.0), 0.0) == 1.0
    assert matern_cov(KernelParams(3.5, 2.0, 0.7), 0.0) == 3.5


def test_matern_exponential_calibration_example():
    params = KernelParams(1.0, math.log(20) / 0.2, 0.5)
    assert params.phi == pytest.approx(14.9787, abs=1e-4)
    assert matern_cov(params, 0.2) == pytest.approx(0.05, rel=1e-12)


def test_matern_three_halves_example():
    assert matern_cov(KernelParams(1.0, 1.0, 1.5), 1.0) == pytest.approx(2 * math.exp(-1), rel=1e-12)
    assert matern_cov(KernelParams(1.0, 1.0, 1.5), 1.0) == pytest.approx(0.7357588823, abs=1e-10)


HALF_INTEGER_FORMS = {
    0.5: lambda t: np.exp(-t),
    1.5: lambda t: (1 + t) * np.exp(-t),
    2.5: lambda t: (1 + t + t**2 / 3) * np.exp(-t),
}


@pytest.mark.parametrize("nu", sorted(HALF_INTEGER_FORMS))
@pytest.mark.parametrize("phi", [0.3, 1.0, 14.9787, 120.0])
def test_matern_half_integer_closed_forms(nu, phi):
    h = np.geomspace(1e-4, 10, 400) / phi
    got = matern_cov(KernelParams(2.0, phi, nu), h)
    np.testing.assert_allclose(got, 2.0 * HALF_INTEGER_FORMS[nu](phi * h), rtol=1e-10)


@pytest.mark.parametrize("nu", NU_GRID + [3.3])
def test_matern_against_quadrature_bessel(nu):
    phi = 7.0
    h = np.geomspace(1e-6, 50, 40) / phi
    t = phi * h
    oracle = np.array([ti**nu * bessel_k_quadrature(nu, ti) for ti in t]) / (math.gamma(nu) * 2 ** (nu - 1))
    np.testing.assert_allclose(matern_corr(phi, nu, h), oracle, rtol=1e-8)


@pytest.mark.parametrize("nu", [0.5, 1.0, 1.5, 2.0])
def test_matern_continuous_at_zero(nu):
    phi = 5.0
    h = np.array([1e-12, 1e-10, 1e-9]) / phi
    assert np.all(np.abs(matern_cov(KernelParams(1.0, phi, nu), h) - 1.0) < 1e-6)


@pytest.mark.parametrize("nu", [0.1, 0.25, 0.4])
def test_matern_rough_kernel_near_zero_follows_leading_term(nu):
    # 1 - rho(t) ~ Gamma(1-nu) / (Gamma(1+nu) 4^nu) t^(2 nu): for nu < 3/8 this
    # exceeds 1e-6 at t = 1e-8, so only the expansion itself is checked
    t = np.array([1e-12, 1e-10, 1e-8])
    lead = math.gamma(1 - nu) / (math.gamma(1 + nu) * 4**nu) * t ** (2 * nu)
    np.testing.assert_allclose(1.0 - matern_corr(1.0, nu, t), lead, rtol=1e-3)


@pytest.mark.parametrize("nu", NU_GRID + [4.0])
def test_matern_strictly_decreasing(nu):
    phi = 10.0
    h = np.linspace(1e-4, 1.5, 500)
    c = matern_corr(phi, nu, h)
    assert np.all(np.diff(c) < 0)
    assert np.all((c > 0) & (c <= 1))


def test_matern_large_array_path_matches_direct():
    # more than 4096 entries routes through the unique-value table
    rng = np.random.default_rng(3)
    h = rng.choice(np.linspace(0, 1, 50), size=(80, 80))
    big = matern_corr(9.0, 1.3, h)
    small = np.array([[matern_corr(9.0, 1.3, v) for v in row] for row in h])
    np.testing.assert_allclose(big, small, rtol=0, atol=1e-15)


def test_matern_domain_errors():
    p = KernelParams(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        matern_cov(p, math.nan)
    with pytest.raises(ValueError):
        matern_cov(p, -0.1)


@pytest.mark.parametrize("bad", [dict(sigma2=0), dict(phi=-1), dict(nu=0), dict(sigma2=math.inf)])
def test_kernel_params_validation(bad):
    args = dict(sigma2=1.0, phi=1.0, nu=1.0) | bad
    with pytest.raises(ValueError):
        KernelParams(**args)


# ---- spectral density, microergodic --------------------------------------


def test_spectral_density_examples():
    assert spectral_density(KernelParams(1.0, 1.0, 0.5), 0.0, 1) == pytest.approx(1 / math.pi, rel=1e-14)
    assert spectral_density(KernelParams(1.0, 1.0, 0.5), 0.0, 1) == pytest.approx(0.3183098862, abs=1e-10)
    assert spectral_density(KernelParams(2.0, 1.0, 0.5), 0.0, 1) == pytest.approx(2 / math.pi, rel=1e-14)


def test_spectral_density_cauchy_shape():
    u = np.linspace(-5, 5, 11)
    got = spectral_density(KernelParams(1.0, 2.0, 0.5), u, 1)
    np.testing.assert_allclose(got, 2.0 / (math.pi * (4.0 + u**2)), rtol=1e-13)


def _spectral_mass(params, upper):
    f = lambda u: spectral_density(params, u, 1)
    cuts = [0.0, params.phi, 100 * params.phi, upper]
    return 2 * sum(integrate.quad(f, a, b, limit=400, epsabs=0, epsrel=1e-10)[0] for a, b in zip(cuts, cuts[1:]))


@pytest.mark.parametrize("nu", NU_GRID)
def test_spectral_density_integrates_to_sigma2_1d(nu):
    params = KernelParams(1.7, 3.0, nu)
    assert _spectral_mass(params, np.inf) == pytest.approx(params.sigma2, rel=1e-8)


@pytest.mark.parametrize("nu", [0.5, 1.0, 1.5, 2.0])
def test_spectral_density_truncated_window(nu):
    params = KernelParams(1.7, 3.0, nu)
    assert _spectral_mass(params, 1e4 * params.phi) == pytest.approx(params.sigma2, rel=1e-4)


def test_spectral_density_truncated_window_heavy_tail():
    # at nu = 1/4 the density decays like u^-1.5; the mass beyond L = 1e4 phi is
    # about 4 C sigma2 phi^(1/2) L^(-1/2), far above 1e-4
    params = KernelParams(1.0, 3.0, 0.25)
    upper = 1e4 * params.phi
    c = math.gamma(0.75) / (math.gamma(0.25) * math.sqrt(math.pi))
    tail = 4 * c * math.sqrt(params.phi) / math.sqrt(upper)
    assert 1.0 - _spectral_mass(params, upper) == pytest.approx(tail, rel=1e-3)


@pytest.mark.parametrize("nu", [0.5, 1.5])
def test_spectral_density_integrates_to_sigma2_2d(nu):
    # radial integral over the plane: 2 pi int_0^inf r f(r) dr
    params = KernelParams(1.0, 2.0, nu)
    total = 2 * math.pi * integrate.quad(lambda r: r * spectral_density(params, r, 2), 0, np.inf, limit=400)[0]
    assert total == pytest.approx(1.0, rel=1e-6)


def test_spectral_density_rejects_dim():
    with pytest.raises(ValueError):
        spectral_density(KernelParams(1.0, 1.0, 1.0), 0.0, 3)


def test_microergodic_examples():
    assert float(microergodic(KernelParams(1.0, 1.0, 0.5))) == 1.0
    assert float(microergodic(KernelParams(4.0, 0.5, 1.0))) == 1.0
    assert float(microergodic(KernelParams(1.0, 10.7, 2.0))) == pytest.approx(10.7**4, rel=1e-15)
    assert float(microergodic(KernelParams(1.0, 10.7, 2.0))) == pytest.approx(13107.9601, abs=1e-9)
    assert isinstance(microergodic(KernelParams(1.0, 1.0, 1.0)), MicroergodicValue)


def test_equivalent_sigma2_examples():
    assert equivalent_sigma2(KernelParams(1.0, 1.0, 0.5), 1.0) == 1.0
    assert equivalent_sigma2(KernelParams(1.0, 10.0, 0.5), 12.0) == pytest.approx(10 / 12, rel=1e-14)
    assert equivalent_sigma2(KernelParams(2.0, 1.0, 1.0), 2.0) == pytest.approx(0.5, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(
    s2=st.floats(1e-3, 1e3),
    phi0=st.floats(0.1, 100),
    phi1=st.floats(0.1, 100),
    nu=st.floats(0.1, 3.0),
)
def test_equivalent_sigma2_preserves_microergodic(s2, phi0, phi1, nu):
    theta0 = KernelParams(s2, phi0, nu)
    theta1 = KernelParams(equivalent_sigma2(theta0, phi1), phi1, nu)
    assert float(microergodic(theta1)) == pytest.approx(float(microergodic(theta0)), rel=1e-14)


# ---- calibration ---------------------------------------------------------


@pytest.mark.parametrize("nu", NU_GRID)
@pytest.mark.parametrize("distance", [0.2, 0.4])
def test_calibrate_phi_hits_level(nu, distance):
    phi = calibrate_phi(nu, distance, 0.05)
    assert matern_corr(phi, nu, distance) == pytest.approx(0.05, abs=1e-10)


def test_calibrate_phi_exponential_closed_form():
    assert calibrate_phi(0.5, 0.2) == pytest.approx(math.log(20) / 0.2, rel=1e-10)


def test_calibrate_phi_scales_inversely_with_distance():
    assert calibrate_phi(1.5, 0.4) == pytest.approx(calibrate_phi(1.5, 0.2) / 2, rel=1e-9)
