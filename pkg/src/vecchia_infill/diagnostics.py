"""Normalised conditional residuals and their autocorrelation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import GPSample
from .matern import KernelParams
from .vecchia import NeighborPlan, fit_phi, vecchia_factor

__all__ = ["ResidualSeries", "AdequacyRow", "normalized_residuals", "acf", "adequacy_report", "DEFAULT_MAX_LAG"]

DEFAULT_MAX_LAG = 30


@dataclass(frozen=True, eq=False)
class ResidualSeries:
    """Standardised residuals ``z_i`` in the plan's site order."""

    values: np.ndarray
    params: KernelParams
    plan: NeighborPlan

    def __len__(self):
        return self.values.size


def normalized_residuals(params_fit: KernelParams, plan: NeighborPlan, sample) -> ResidualSeries:
    """``(y_i - w_i^T y_{S_i}) / sqrt(sigma2 * v_i)`` under ``params_fit``."""
    y = sample.values if isinstance(sample, GPSample) else np.asarray(sample, dtype=float)
    factor = vecchia_factor(params_fit.phi, params_fit.nu, plan)
    z = factor.residuals(y) / np.sqrt(params_fit.sigma2 * factor.variances)
    return ResidualSeries(z, params_fit, plan)


def acf(series, max_lag: int = DEFAULT_MAX_LAG) -> np.ndarray:
    """Sample autocorrelation at lags ``0..max_lag``.

    Uses the biased estimator: every lag is divided by the lag-0 sum of
    squares, so ``|r_l| <= 1``.

    Raises
    ------
    ValueError
        For a constant series or ``max_lag`` outside ``[1, len - 1]``.
    """
    z = np.asarray(getattr(series, "values", series), dtype=float)
    n = z.size
    if not 1 <= max_lag < n:
        raise ValueError(f"max_lag must be in [1, {n - 1}], got {max_lag}")
    z = z - z.mean()
    denom = z @ z
    if not denom > 0:
        raise ValueError("autocorrelation of a constant series is undefined")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for lag in range(1, max_lag + 1):
        out[lag] = z[:-lag] @ z[lag:] / denom
    return out


@dataclass(frozen=True)
class AdequacyRow:
    k: int
    phi_hat: float
    sigma2_hat: float
    inside_fraction: float
    max_abs_acf: float
    boundary: bool
    acf: np.ndarray

    def summary(self) -> dict:
        return {
            "k": self.k,
            "phi_hat": self.phi_hat,
            "sigma2_hat": self.sigma2_hat,
            "inside_fraction": self.inside_fraction,
            "max_abs_acf": self.max_abs_acf,
            "boundary": self.boundary,
        }


def adequacy_report(
    params_fit: KernelParams,
    plans: list[NeighborPlan],
    sample,
    band: float = 0.05,
    max_lag: int = DEFAULT_MAX_LAG,
    bracket: tuple[float, float] | None = None,
) -> list[AdequacyRow]:
    """Fit ``phi`` for each plan and summarise the residual ACF.

    ``params_fit`` supplies ``nu`` and the reference decay; the default
    bracket is ``[0.1, 10]`` times that decay.  ``inside_fraction`` counts
    lags ``1..max_lag`` with ``|r_l| <= band``.
    """
    if not band > 0:
        raise ValueError("band must be positive")
    bracket = bracket or (0.1 * params_fit.phi, 10.0 * params_fit.phi)
    rows = []
    for plan in plans:
        fit = fit_phi(params_fit.nu, plan, sample, bracket)
        fitted = KernelParams(fit.sigma2, fit.phi, params_fit.nu)
        r = acf(normalized_residuals(fitted, plan, sample), max_lag)
        lags = np.abs(r[1:])
        rows.append(
            AdequacyRow(plan.k, fit.phi, fit.sigma2, float(np.mean(lags <= band)), float(lags.max()), fit.boundary, r)
        )
    return rows
