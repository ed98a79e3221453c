"""Prediction-error second moments under two equivalent Matern measures.

Measure 0 is the data-generating kernel ``theta0``; measure 1 uses a decay
``phi1`` with the variance chosen so both share ``sigma2 * phi**(2 nu)``.
Residuals come in two flavours: ``e`` conditions on all earlier sites and
``et`` (e-tilde) on the Vecchia conditioning set.  A trailing digit names
the measure whose kriging weights are used.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .gp import LocationSet, GPSample, NumericalError, cholesky_factor, grid_1d, grid_2d, simulate
from .matern import KernelParams, calibrate_phi, equivalent_sigma2
from .vecchia import NeighborPlan, VecchiaFactor, k_schedule, nearest_neighbors, vecchia_factor

__all__ = [
    "ErrorVarianceTable",
    "ConditionSums",
    "CnResult",
    "CampaignConfig",
    "measure_one",
    "error_variance_table",
    "assumption1_stat",
    "theorem1_condition_sums",
    "cn_statistic",
    "cn_campaign",
    "replicate_seed",
]


def measure_one(theta0: KernelParams, phi1: float) -> KernelParams:
    """Kernel with decay ``phi1`` equivalent to ``theta0``."""
    return KernelParams(equivalent_sigma2(theta0, phi1), phi1, theta0.nu)


def _residual_operator(chol: np.ndarray) -> np.ndarray:
    # rows of diag(L) L^-1 are the full-conditioning prediction-error weights
    inv = solve_triangular(chol, np.eye(chol.shape[0]), lower=True, check_finite=False)
    return np.diag(chol)[:, None] * inv


def _rowsumsq(a: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, a)


@dataclass(frozen=True, eq=False)
class ErrorVarianceTable:
    """Second moments of prediction errors, one entry per site.

    Attribute names read ``E<measure>_<error>``: ``E1_et1`` is
    ``E_1 et_{i,1}^2``, ``E0_et1_minus_e0`` is ``E_0 (et_{i,1} - e_{i,0})^2``.
    Cross-measure entries are ``None`` for tables built with
    ``cross_terms=False``.
    """

    theta0: KernelParams
    theta1: KernelParams
    plan: NeighborPlan
    E0_e0: np.ndarray
    E1_et1: np.ndarray
    chol0: np.ndarray = field(repr=False)
    factor1: VecchiaFactor = field(repr=False)
    E1_e1: np.ndarray | None = None
    E1_e0: np.ndarray | None = None
    E0_et1: np.ndarray | None = None
    E0_et1_minus_e0: np.ndarray | None = None
    E1_et1_minus_e0: np.ndarray | None = None
    E1_e1_minus_e0: np.ndarray | None = None

    @property
    def locations(self) -> LocationSet:
        return self.plan.locations

    @property
    def n(self) -> int:
        return self.plan.n

    def metadata(self) -> dict:
        return {
            "theta0": vars(self.theta0),
            "theta1": vars(self.theta1),
            "plan": self.plan.to_dict(),
            "locations": self.locations.to_dict(),
        }


def error_variance_table(
    theta0: KernelParams,
    phi1: float,
    plan: NeighborPlan,
    locs: LocationSet | None = None,
    cross_terms: bool = True,
) -> ErrorVarianceTable:
    """Fill the prediction-error second moments for every site.

    Difference terms such as ``E_j (et_{i,1} - e_{i,0})^2`` are evaluated as
    quadratic forms of the weight-difference vector under kernel ``j``.
    With ``cross_terms=False`` only ``E_0 e_{i,0}^2`` and
    ``E_1 et_{i,1}^2`` are filled, which is all :func:`cn_statistic` needs
    and avoids the O(n^3) dense products.
    """
    locs = plan.locations if locs is None else locs
    if locs is not plan.locations and locs.n != plan.n:
        raise ValueError("plan and locations disagree")
    theta1 = measure_one(theta0, phi1)
    chol0 = cholesky_factor(theta0, locs)
    factor1 = vecchia_factor(phi1, theta0.nu, plan)
    E0_e0 = np.diag(chol0) ** 2
    E1_et1 = theta1.sigma2 * factor1.variances
    if not cross_terms:
        return ErrorVarianceTable(theta0, theta1, plan, E0_e0, E1_et1, chol0, factor1)

    chol1 = cholesky_factor(theta1, locs)
    b0 = _residual_operator(chol0)
    b1 = _residual_operator(chol1)
    bt1 = factor1.residual_operator()
    d_t = bt1 - b0
    return ErrorVarianceTable(
        theta0,
        theta1,
        plan,
        E0_e0,
        E1_et1,
        chol0,
        factor1,
        E1_e1=np.diag(chol1) ** 2,
        E1_e0=_rowsumsq(b0 @ chol1),
        E0_et1=_rowsumsq(bt1 @ chol0),
        E0_et1_minus_e0=_rowsumsq(d_t @ chol0),
        E1_et1_minus_e0=_rowsumsq(d_t @ chol1),
        E1_e1_minus_e0=_rowsumsq((b1 - b0) @ chol1),
    )


def assumption1_stat(theta0: KernelParams, phi1: float, locs: LocationSet, via: str = "identity") -> float:
    """``sum_i E_1 (e_{i,1} - e_{i,0})^2 / E_1 e_{i,1}^2`` with full conditioning.

    ``via="identity"`` uses ``E_1 e_{i,0}^2 - E_1 e_{i,1}^2`` for the
    numerator (orthogonality of the measure-1 optimal error);
    ``via="quadratic"`` evaluates the weight-difference quadratic form.
    """
    theta1 = measure_one(theta0, phi1)
    chol0 = cholesky_factor(theta0, locs)
    chol1 = cholesky_factor(theta1, locs)
    b0 = _residual_operator(chol0)
    E1_e1 = np.diag(chol1) ** 2
    if via == "identity":
        num = _rowsumsq(b0 @ chol1) - E1_e1
    elif via == "quadratic":
        num = _rowsumsq((_residual_operator(chol1) - b0) @ chol1)
    else:
        raise ValueError(f"via must be 'identity' or 'quadratic', got {via!r}")
    return float(np.sum(num / E1_e1))


@dataclass(frozen=True)
class ConditionSums:
    """The four sums whose boundedness gives asymptotic normality.

    ``cond2_*`` use measure-0 expectations over measure-1 Vecchia variances;
    ``cond3_*`` swap the roles.
    """

    cond2_diff: float
    cond2_ratio: float
    cond3_diff: float
    cond3_ratio: float

    def as_dict(self) -> dict:
        return dict(vars(self))


def theorem1_condition_sums(table: ErrorVarianceTable) -> ConditionSums:
    if table.E0_et1_minus_e0 is None:
        raise ValueError("table was built without cross terms")
    return ConditionSums(
        cond2_diff=float(np.sum(table.E0_et1_minus_e0 / table.E1_et1)),
        cond2_ratio=float(np.sum((table.E0_e0 / table.E1_et1 - 1.0) ** 2)),
        cond3_diff=float(np.sum(table.E1_et1_minus_e0 / table.E0_e0)),
        cond3_ratio=float(np.sum((table.E1_et1 / table.E0_e0 - 1.0) ** 2)),
    )


def cn_statistic(
    sample: GPSample | np.ndarray,
    table: ErrorVarianceTable,
    plan: NeighborPlan | None = None,
    theta0: KernelParams | None = None,
    phi1: float | None = None,
) -> float:
    """``n^-1/2 [sum et_{i,1}^2 / E_1 et_{i,1}^2 - sum e_{i,0}^2 / E_0 e_{i,0}^2]``.

    Residuals come from the sample, denominators from ``table``.  The
    optional ``plan``, ``theta0`` and ``phi1`` are checked against the table.
    """
    if plan is not None and plan is not table.plan:
        raise ValueError("table was built for a different plan")
    if theta0 is not None and theta0 != table.theta0:
        raise ValueError("table was built for a different theta0")
    if phi1 is not None and not math.isclose(phi1, table.theta1.phi, rel_tol=1e-12):
        raise ValueError("table was built for a different phi1")
    y = sample.values if isinstance(sample, GPSample) else np.asarray(sample, dtype=float)
    et1 = table.factor1.residuals(y)
    # sum e_{i,0}^2 / E_0 e_{i,0}^2 = y^T V0^{-1} y
    z = solve_triangular(table.chol0, y, lower=True, check_finite=False)
    return float((np.sum(et1**2 / table.E1_et1) - z @ z) / math.sqrt(y.size))


@dataclass(frozen=True)
class CampaignConfig:
    """Design of a c_n Monte Carlo study.

    ``sizes`` are sample sizes for ``dim == 1`` and grid side counts for
    ``dim == 2``.
    """

    dim: int
    sizes: tuple
    nus: tuple
    replicates: int
    seed: int
    calibration_distance: float = 0.2
    calibration_level: float = 0.05
    sigma2: float = 1.0
    k_rule: str = "log"
    k_param: float = 1.5
    phi1_factor: float = 1.2

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.replicates < 2:
            raise ValueError("need at least 2 replicates")


@dataclass(frozen=True)
class CnResult:
    """Replicate values of c_n for one (n, nu) cell."""

    dim: int
    n: int
    nu: float
    k: int
    phi0: float
    phi1: float
    values: np.ndarray
    seeds: tuple
    campaign_seed: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def sd(self) -> float:
        return float(np.std(self.values, ddof=1))

    @property
    def replicates(self) -> int:
        return int(self.values.size)

    def row(self) -> dict:
        return {
            "dim": self.dim,
            "n": self.n,
            "nu": self.nu,
            "k": self.k,
            "mean_cn": self.mean,
            "sd_cn": self.sd,
            "replicates": self.replicates,
            "seed": self.campaign_seed,
        }


def replicate_seed(seed: int, dim: int, n: int, nu: float, replicate: int) -> tuple:
    """Key tuple for the Philox stream of one replicate of one cell."""
    return (int(seed), int(dim), int(n), int(round(nu * 1_000_000)), int(replicate))


def _cell_locations(dim: int, size: int) -> LocationSet:
    return grid_1d(size) if dim == 1 else grid_2d(size)


def _run_cell(config: CampaignConfig, size: int, nu: float, workers: int) -> CnResult:
    locs = _cell_locations(config.dim, size)
    n = locs.n
    phi0 = calibrate_phi(nu, config.calibration_distance, config.calibration_level)
    theta0 = KernelParams(config.sigma2, phi0, nu)
    phi1 = config.phi1_factor * phi0
    k = k_schedule(n, config.k_rule, config.k_param)
    plan = nearest_neighbors(locs, k, config.k_rule)
    try:
        table = error_variance_table(theta0, phi1, plan, cross_terms=False)
    except NumericalError as exc:
        raise NumericalError(f"cell (n={n}, nu={nu}) failed: {exc}") from exc

    seeds = tuple(replicate_seed(config.seed, config.dim, n, nu, r) for r in range(config.replicates))

    def one(r):
        try:
            sample = simulate(theta0, locs, seeds[r], factor=table.chol0)
            return cn_statistic(sample, table)
        except Exception as exc:
            raise NumericalError(f"cell (n={n}, nu={nu}) replicate {r} failed: {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            values = list(pool.map(one, range(config.replicates)))
    else:
        values = [one(r) for r in range(config.replicates)]
    return CnResult(config.dim, n, float(nu), k, phi0, phi1, np.array(values), seeds, config.seed)


def cn_campaign(config: CampaignConfig, workers: int = 1) -> list[CnResult]:
    """Run every (size, nu) cell of ``config``; deterministic given its seed."""
    return [_run_cell(config, size, nu, workers) for nu in config.nus for size in config.sizes]
