"""Matern covariance, spectral density and microergodic reparameterisation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .bessel import bessel_k_scaled

__all__ = [
    "KernelParams",
    "MicroergodicValue",
    "matern_cov",
    "matern_corr",
    "spectral_density",
    "microergodic",
    "equivalent_sigma2",
    "calibrate_phi",
]

# Arrays larger than this are evaluated on their unique entries only; grid
# distance matrices repeat each value many times.
_UNIQUE_THRESHOLD = 4096


@dataclass(frozen=True)
class KernelParams:
    """Matern parameters: variance ``sigma2``, decay ``phi``, smoothness ``nu``."""

    sigma2: float
    phi: float
    nu: float

    def __post_init__(self):
        for name in ("sigma2", "phi", "nu"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float, np.floating, np.integer)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a finite positive number, got {value!r}")
            object.__setattr__(self, name, float(value))

    def with_sigma2(self, sigma2: float) -> "KernelParams":
        return KernelParams(sigma2, self.phi, self.nu)

    def with_phi(self, phi: float) -> "KernelParams":
        return KernelParams(self.sigma2, phi, self.nu)


@dataclass(frozen=True)
class MicroergodicValue:
    """The product ``sigma2 * phi**(2 nu)``."""

    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("microergodic value must be positive")

    def __float__(self):
        return self.value


def _corr_positive(phi: float, nu: float, h: np.ndarray) -> np.ndarray:
    x = phi * h
    # (x^nu K_nu(x)) / (Gamma(nu) 2^(nu-1)) in log space, K carried as e^x K
    log_norm = math.lgamma(nu) + (nu - 1.0) * math.log(2.0)
    out = np.zeros_like(x)
    tiny = x < 1e-300
    out[tiny] = 1.0
    xs = x[~tiny]
    with np.errstate(under="ignore"):
        out[~tiny] = np.exp(nu * np.log(xs) - xs - log_norm) * bessel_k_scaled(nu, xs)
    return np.minimum(out, 1.0)


def matern_corr(phi: float, nu: float, h) -> np.ndarray | float:
    """Matern correlation at distance(s) ``h`` (unit variance).

    Raises
    ------
    ValueError
        If any distance is negative or not finite.
    """
    scalar = np.ndim(h) == 0
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise ValueError("distances must be finite")
    if np.any(h < 0):
        raise ValueError("distances must be nonnegative")
    out = np.ones(h.shape)
    pos = h > 0
    if np.any(pos):
        hp = h[pos]
        if hp.size > _UNIQUE_THRESHOLD:
            values, inverse = np.unique(hp, return_inverse=True)
            out[pos] = _corr_positive(phi, nu, values)[inverse]
        else:
            out[pos] = _corr_positive(phi, nu, hp)
    return float(out) if scalar else out


def matern_cov(params: KernelParams, h) -> np.ndarray | float:
    """Matern covariance ``sigma2 * corr(h)``; equals ``sigma2`` at ``h == 0``."""
    return params.sigma2 * matern_corr(params.phi, params.nu, h)


def spectral_density(params: KernelParams, u, d: int = 1):
    """Isotropic Matern spectral density in ``d`` dimensions.

    Normalised so that it integrates to ``sigma2`` over R^d, i.e. it is the
    Fourier pair of :func:`matern_cov` under ``K(h) = int f(u) e^{i u.h} du``.
    ``u`` is the frequency norm.
    """
    if d not in (1, 2):
        raise ValueError(f"d must be 1 or 2, got {d}")
    nu, phi = params.nu, params.phi
    half_d = 0.5 * d
    log_c = math.lgamma(nu + half_d) - math.lgamma(nu) - half_d * math.log(math.pi)
    u = np.asarray(u, dtype=float)
    out = math.exp(log_c) * params.sigma2 * phi ** (2 * nu) / (phi**2 + u**2) ** (nu + half_d)
    return float(out) if out.ndim == 0 else out


def microergodic(params: KernelParams) -> MicroergodicValue:
    return MicroergodicValue(params.sigma2 * params.phi ** (2.0 * params.nu))


def equivalent_sigma2(source: KernelParams, phi1: float) -> float:
    """Variance that pairs with ``phi1`` to keep ``sigma2 * phi**(2 nu)`` fixed."""
    if not phi1 > 0:
        raise ValueError("phi1 must be positive")
    return source.sigma2 * (source.phi / phi1) ** (2.0 * source.nu)


def calibrate_phi(nu: float, distance: float, level: float = 0.05) -> float:
    """Decay such that the Matern correlation equals ``level`` at ``distance``."""
    if not (0.0 < level < 1.0) or not distance > 0:
        raise ValueError("need 0 < level < 1 and distance > 0")

    def gap(log_phi):
        return matern_corr(math.exp(log_phi), nu, distance) - level

    lo, hi = math.log(1e-3 / distance), math.log(1e3 / distance)
    return math.exp(brentq(gap, lo, hi, xtol=1e-14, rtol=1e-13))
