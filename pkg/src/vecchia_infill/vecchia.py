"""Vecchia's approximate likelihood for Matern Gaussian processes.

Sites are processed in the location order.  Site ``i`` is predicted from the
conditioning set ``S_i`` (a subset of earlier sites) and the per-site
conditional moments are computed in correlation scale, so the variance
parameter enters every formula as an outside factor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize_scalar

from .gp import RCOND_MIN, GPSample, LocationSet, NumericalError, _cholesky, corr_matrix
from .matern import KernelParams, matern_corr

__all__ = [
    "NeighborPlan",
    "VecchiaFactor",
    "FitResult",
    "nearest_neighbors",
    "full_plan",
    "k_schedule",
    "vecchia_factor",
    "vecchia_loglik",
    "exact_loglik",
    "sigma2_hat_vecch",
    "profile_loglik",
    "fit_phi",
    "BoundaryWarning",
]

_LOG_2PI = math.log(2.0 * math.pi)


class BoundaryWarning(UserWarning):
    """The profile maximiser sits at (or next to) an end of the search bracket."""


@dataclass(frozen=True, eq=False)
class _SiteGroup:
    sites: np.ndarray  # (g,)
    neighbors: np.ndarray  # (g, m)
    distances: np.ndarray  # unique positive distances in the local blocks
    inverse: np.ndarray  # (g, m+1, m+1) indices into [0] + distances


@dataclass(frozen=True, eq=False)
class NeighborPlan:
    """Conditioning sets ``neighbors[i]`` (indices ``< i``) for every site.

    ``rule`` records how ``k`` was chosen (``fixed``, ``power``, ``log`` or
    ``full``).
    """

    locations: LocationSet
    neighbors: tuple
    k: int
    rule: str = "fixed"

    def __post_init__(self):
        if len(self.neighbors) != self.locations.n:
            raise ValueError("one conditioning set per site is required")
        for i, nb in enumerate(self.neighbors):
            nb = np.asarray(nb, dtype=np.intp)
            if nb.size and (nb.max() >= i or nb.min() < 0):
                raise ValueError(f"conditioning set of site {i} must use earlier sites only")
            if np.unique(nb).size != nb.size:
                raise ValueError(f"conditioning set of site {i} has repeats")

    @property
    def n(self) -> int:
        return self.locations.n

    def to_dict(self) -> dict:
        return {"k": self.k, "rule": self.rule, "n": self.n}

    @cached_property
    def groups(self) -> tuple:
        """Sites bucketed by conditioning-set size, with cached local geometry."""
        sizes = np.array([len(nb) for nb in self.neighbors])
        pts = self.locations.points
        out = []
        for m in np.unique(sizes):
            sites = np.nonzero(sizes == m)[0]
            nbrs = np.array([self.neighbors[i] for i in sites], dtype=np.intp).reshape(sites.size, m)
            block = np.concatenate([sites[:, None], nbrs], axis=1)
            coords = pts[block]  # (g, m+1, d)
            diff = coords[:, :, None, :] - coords[:, None, :, :]
            dist = np.sqrt(np.einsum("gijk,gijk->gij", diff, diff))
            # symmetrise so both triangles hit the same unique value
            dist = np.triu(dist) + np.swapaxes(np.triu(dist, 1), 1, 2)
            values, inverse = np.unique(dist, return_inverse=True)
            if values[0] != 0.0:
                values = np.concatenate([[0.0], values])
                inverse = inverse + 1
            out.append(_SiteGroup(sites, nbrs, values[1:], inverse.reshape(dist.shape)))
        return tuple(out)

    @cached_property
    def conditions_on_all_previous(self) -> bool:
        """True when every set is a permutation of all earlier sites."""
        return all(len(nb) == i and (i == 0 or np.array_equal(np.sort(nb), np.arange(i))) for i, nb in enumerate(self.neighbors))

    @cached_property
    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """``(index, mask)`` arrays of shape ``(n, max set size)``."""
        width = max((len(nb) for nb in self.neighbors), default=0)
        index = np.zeros((self.n, width), dtype=np.intp)
        mask = np.zeros((self.n, width), dtype=bool)
        for i, nb in enumerate(self.neighbors):
            index[i, : len(nb)] = nb
            mask[i, : len(nb)] = True
        return index, mask


def _neighbors_of(pts: np.ndarray, i: int, k: int) -> np.ndarray:
    if i == 0 or k == 0:
        return np.empty(0, dtype=np.intp)
    d2 = np.sum((pts[:i] - pts[i]) ** 2, axis=1)
    if i <= k:
        return np.argsort(d2, kind="stable").astype(np.intp)
    # stable sort keeps the smaller index first among equal distances
    return np.argsort(d2, kind="stable")[:k].astype(np.intp)


def nearest_neighbors(locs: LocationSet, k: int, rule: str = "fixed") -> NeighborPlan:
    """The ``min(i, k)`` nearest earlier sites of every site, nearest first.

    Ties in distance go to the smaller ordering index.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    pts = locs.points
    return NeighborPlan(locs, tuple(_neighbors_of(pts, i, k) for i in range(locs.n)), int(k), rule)


def full_plan(locs: LocationSet) -> NeighborPlan:
    """Condition every site on all earlier sites (the exact likelihood)."""
    return NeighborPlan(
        locs, tuple(np.arange(i, dtype=np.intp) for i in range(locs.n)), max(locs.n - 1, 1), "full"
    )


def k_schedule(n: int, rule: str, param: float = 1.0) -> int:
    """Neighbour count for sample size ``n``.

    ``power`` gives ``floor(n**param)``, ``log`` gives the integer closest
    to ``param * ln(n)``, ``fixed`` gives ``int(param)`` and ``full`` gives
    ``n - 1``; the result is never below 1.
    """
    if n < 2:
        raise ValueError("k_schedule needs n >= 2")
    if rule == "power":
        k = math.floor(n**param + 1e-9)
    elif rule == "log":
        k = math.floor(param * math.log(n) + 0.5)
    elif rule == "fixed":
        k = int(param)
    elif rule == "full":
        k = n - 1
    else:
        raise ValueError(f"unknown k rule {rule!r}; expected power, log, fixed or full")
    return max(int(k), 1)


@dataclass(frozen=True, eq=False)
class VecchiaFactor:
    """Per-site kriging weights and unit-scale conditional variances.

    ``weights[i, j]`` multiplies ``y[index[i, j]]``; padded slots carry zero
    weight.
    """

    plan: NeighborPlan
    phi: float
    nu: float
    weights: np.ndarray
    variances: np.ndarray = field(repr=False)

    def predictions(self, y: np.ndarray) -> np.ndarray:
        index, _ = self.plan.padded
        if index.shape[1] == 0:
            return np.zeros_like(y)
        return np.einsum("ij,ij->i", self.weights, y[index])

    def residuals(self, y) -> np.ndarray:
        """``y_i - w_i^T y_{S_i}`` for every site."""
        y = np.asarray(y, dtype=float)
        return y - self.predictions(y)

    def logdet(self) -> float:
        """Log-determinant of the correlation matrix implied by the factorisation."""
        return float(np.sum(np.log(self.variances)))

    def residual_operator(self) -> np.ndarray:
        """Dense unit lower-triangular ``B`` with ``B @ y == residuals(y)``."""
        index, mask = self.plan.padded
        op = np.eye(self.plan.n)
        rows = np.repeat(np.arange(self.plan.n), index.shape[1]).reshape(index.shape)
        np.add.at(op, (rows[mask], index[mask]), -self.weights[mask])
        return op


def vecchia_factor(phi: float, nu: float, plan: NeighborPlan) -> VecchiaFactor:
    """Solve every site's small conditioning system at ``(phi, nu)``.

    Raises
    ------
    NumericalError
        If any conditioning system has reciprocal condition below
        ``RCOND_MIN`` or a conditional variance is not positive.
    """
    if plan.n > 2 and plan.conditions_on_all_previous:
        return _factor_from_cholesky(phi, nu, plan)
    n = plan.n
    index, _ = plan.padded
    weights = np.zeros(index.shape)
    variances = np.ones(n)
    for group in plan.groups:
        m = group.neighbors.shape[1]
        if m == 0:
            continue
        table = np.concatenate([[1.0], matern_corr(phi, nu, group.distances)])
        local = table[group.inverse]
        sub = local[:, 1:, 1:]
        cross = local[:, 1:, 0]
        if m > 1:
            eig = np.linalg.eigvalsh(sub)
            rcond = eig[:, 0] / eig[:, -1]
            bad = np.nonzero(~(rcond >= RCOND_MIN))[0]
            if bad.size:
                site = int(group.sites[bad[0]])
                raise NumericalError(
                    f"conditioning system of site {site} is ill-conditioned "
                    f"(rcond={rcond[bad[0]]:.3e}) at phi={phi:.6g}, nu={nu}"
                )
        w = np.linalg.solve(sub, cross[:, :, None])[:, :, 0]
        var = 1.0 - np.einsum("gi,gi->g", cross, w)
        if not np.all(var > 0):
            site = int(group.sites[np.argmin(var)])
            raise NumericalError(f"nonpositive conditional variance at site {site} (phi={phi:.6g})")
        weights[group.sites, :m] = w
        variances[group.sites] = var
    return VecchiaFactor(plan, float(phi), float(nu), weights, variances)


def _factor_from_cholesky(phi: float, nu: float, plan: NeighborPlan) -> VecchiaFactor:
    # Full conditioning: the per-site systems are the leading blocks of one
    # correlation matrix, whose Cholesky factor L gives every weight at once
    # (rows of diag(L) L^-1).  By eigenvalue interlacing the largest leading
    # block has the smallest reciprocal condition, so one check covers all.
    corr = corr_matrix(phi, nu, plan.locations)
    eig = np.linalg.eigvalsh(corr[:-1, :-1])
    rcond = eig[0] / eig[-1]
    if not rcond >= RCOND_MIN:
        raise NumericalError(
            f"conditioning system of site {plan.n - 1} is ill-conditioned (rcond={rcond:.3e}) at phi={phi:.6g}, nu={nu}"
        )
    chol = _cholesky(corr)
    diag = np.diag(chol)
    op = diag[:, None] * solve_triangular(chol, np.eye(plan.n), lower=True, check_finite=False)
    index, mask = plan.padded
    rows = np.arange(plan.n)[:, None]
    weights = np.where(mask, -op[rows, index], 0.0)
    return VecchiaFactor(plan, float(phi), float(nu), weights, diag**2)


def _values(sample) -> np.ndarray:
    return sample.values if isinstance(sample, GPSample) else np.asarray(sample, dtype=float)


def vecchia_loglik(params: KernelParams, plan: NeighborPlan, sample, factor: VecchiaFactor | None = None) -> float:
    """Vecchia log-likelihood ``sum_i log N(y_i; mu_i, sigma2 * v_i)``."""
    y = _values(sample)
    factor = factor or vecchia_factor(params.phi, params.nu, plan)
    resid = factor.residuals(y)
    var = params.sigma2 * factor.variances
    return float(-0.5 * np.sum(_LOG_2PI + np.log(var) + resid**2 / var))


def exact_loglik(params: KernelParams, sample, locs: LocationSet | None = None) -> float:
    """Exact Gaussian log-likelihood via a dense Cholesky factor."""
    y = _values(sample)
    locs = locs if locs is not None else sample.locations
    chol = _cholesky(params.sigma2 * corr_matrix(params.phi, params.nu, locs))
    z = solve_triangular(chol, y, lower=True, check_finite=False)
    return float(-0.5 * (y.size * _LOG_2PI + 2.0 * np.sum(np.log(np.diag(chol))) + z @ z))


def sigma2_hat_vecch(
    phi1: float, nu: float, plan: NeighborPlan, sample, factor: VecchiaFactor | None = None
) -> float:
    """Closed-form maximiser over ``sigma2`` of the Vecchia likelihood at ``phi1``.

    Equals ``mean(resid_i**2 / v_i)`` where ``resid`` and ``v`` are the
    conditional residuals and unit-scale conditional variances.
    """
    y = _values(sample)
    factor = factor or vecchia_factor(phi1, nu, plan)
    resid = factor.residuals(y)
    return float(np.mean(resid**2 / factor.variances))


def profile_loglik(phi: float, nu: float, plan: NeighborPlan, sample, factor: VecchiaFactor | None = None) -> float:
    """Vecchia log-likelihood maximised over ``sigma2``, without the ``2 pi`` term.

    ``-(1/2) sum log v_i - n/2 - (n/2) log sigma2_hat(phi)``, so adding
    ``-(n/2) log(2 pi)`` gives ``vecchia_loglik`` at ``(sigma2_hat, phi)``.
    """
    y = _values(sample)
    factor = factor or vecchia_factor(phi, nu, plan)
    n = y.size
    s2 = sigma2_hat_vecch(phi, nu, plan, y, factor)
    return float(-0.5 * factor.logdet() - 0.5 * n - 0.5 * n * math.log(s2))


@dataclass(frozen=True)
class FitResult:
    phi: float
    sigma2: float
    profile: float
    boundary: bool = False
    evaluations: int = 0

    def microergodic_value(self, nu: float) -> float:
        return self.sigma2 * self.phi ** (2.0 * nu)


def fit_phi(
    nu: float,
    plan: NeighborPlan,
    sample,
    bracket: tuple[float, float],
    rtol: float = 1e-6,
) -> FitResult:
    """Maximise the profile likelihood over ``phi`` inside ``bracket``.

    Bounded Brent (golden section with parabolic steps) on ``log phi``.
    Values of ``phi`` whose conditioning systems are numerically singular
    are treated as infeasible.  A :class:`BoundaryWarning` is issued, and
    ``boundary`` set, when the maximiser lies within 1% of an endpoint.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0 < lo < hi:
        raise ValueError("bracket must satisfy 0 < phi_lo < phi_hi")
    y = _values(sample)
    calls = 0

    def objective(log_phi):
        nonlocal calls
        calls += 1
        try:
            return -profile_loglik(math.exp(log_phi), nu, plan, y)
        except NumericalError:
            return 1e300

    res = minimize_scalar(
        objective,
        bounds=(math.log(lo), math.log(hi)),
        method="bounded",
        options={"xatol": rtol, "maxiter": 500},
    )
    candidates = [(res.fun, float(res.x)), (objective(math.log(lo)), math.log(lo)), (objective(math.log(hi)), math.log(hi))]
    best_val, best_log = min(candidates, key=lambda c: c[0])
    if best_val >= 1e300:
        raise NumericalError("profile likelihood is not computable anywhere in the bracket")
    phi_hat = math.exp(best_log)
    boundary = phi_hat <= lo * 1.01 or phi_hat >= hi / 1.01
    if boundary:
        warnings.warn(f"profile maximiser phi={phi_hat:.6g} is at the bracket edge [{lo:.6g}, {hi:.6g}]", BoundaryWarning, stacklevel=2)
    s2 = sigma2_hat_vecch(phi_hat, nu, plan, y)
    return FitResult(phi_hat, s2, float(-best_val), boundary, calls)
