"""Locations, covariance matrices, simulation and kriging moments."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

from .matern import KernelParams, matern_corr

__all__ = [
    "NumericalError",
    "LocationSet",
    "GPSample",
    "ConditionalMoments",
    "grid_1d",
    "grid_1d_lattice",
    "grid_2d",
    "make_rng",
    "distance_matrix",
    "cov_matrix",
    "corr_matrix",
    "cholesky_factor",
    "simulate",
    "kriging_moments",
    "cross_error_variance",
    "RCOND_MIN",
]

# Conditioning systems whose reciprocal 2-norm condition number falls below
# this are rejected instead of regularised.
RCOND_MIN = 1e-14


class NumericalError(ArithmeticError):
    """A factorisation or solve could not be carried out reliably."""


@dataclass(frozen=True, eq=False)
class LocationSet:
    """Ordered sampling locations in [0, 1]^d, d in {1, 2}.

    ``points`` is stored already ordered; ``ordering[j]`` is the index of the
    j-th ordered point in the unordered input.
    """

    points: np.ndarray
    ordering: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] not in (1, 2) or pts.shape[0] < 1:
            raise ValueError("points must be an (n, d) array with n >= 1 and d in {1, 2}")
        if not np.all(np.isfinite(pts)) or pts.min() < 0.0 or pts.max() > 1.0:
            raise ValueError("all coordinates must lie in [0, 1]")
        order = np.asarray(self.ordering, dtype=np.intp)
        if order.shape != (pts.shape[0],) or not np.array_equal(np.sort(order), np.arange(pts.shape[0])):
            raise ValueError("ordering must be a permutation of range(n)")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("duplicate locations make the covariance singular")
        pts.setflags(write=False)
        order.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ordering", order)

    @classmethod
    def from_points(cls, points, order: Sequence[int] | None = None, kind: str = "custom") -> "LocationSet":
        """Build from unordered ``points``, applying ``order`` if given."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        order = np.arange(pts.shape[0]) if order is None else np.asarray(order, dtype=np.intp)
        return cls(pts[order], order, kind)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def subset(self, index) -> "LocationSet":
        index = np.asarray(index, dtype=np.intp)
        return LocationSet(self.points[index], np.arange(index.size), self.kind)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "n": self.n}

    @cached_property
    def _distance_table(self) -> tuple[np.ndarray, np.ndarray]:
        dist = distance_matrix(self.points)
        dist = np.triu(dist) + np.triu(dist, 1).T
        values, inverse = np.unique(dist, return_inverse=True)
        return values, inverse.reshape(dist.shape)


def grid_1d(n: int) -> LocationSet:
    """``n`` equispaced points ``i/(n-1)`` on [0, 1] in natural order."""
    if n < 2:
        raise ValueError("grid_1d needs n >= 2")
    return LocationSet(np.linspace(0.0, 1.0, n)[:, None], np.arange(n), "grid_1d")


def grid_1d_lattice(n: int) -> LocationSet:
    """The ``n + 1`` points ``i/n``, ``0 <= i <= n`` (spacing ``1/n``)."""
    if n < 1:
        raise ValueError("grid_1d_lattice needs n >= 1")
    return LocationSet(np.arange(n + 1)[:, None] / n, np.arange(n + 1), "grid_1d_lattice")


def grid_2d(n_s: int) -> LocationSet:
    """``n_s**2`` grid points on [0, 1]^2 ordered by second then first coordinate."""
    if n_s < 2:
        raise ValueError("grid_2d needs n_s >= 2")
    axis = np.linspace(0.0, 1.0, n_s)
    # unordered layout: first coordinate varies slowest
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    return LocationSet.from_points(pts, order, "grid_2d")


def make_rng(*keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by a tuple of nonnegative ints."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


@dataclass(frozen=True, eq=False)
class GPSample:
    """One realisation aligned with the location order."""

    values: np.ndarray
    locations: LocationSet
    seed: tuple = ()
    params: KernelParams | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.locations.n:
            raise ValueError(f"sample has {values.size} values for {self.locations.n} locations")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class ConditionalMoments:
    """Kriging weights and conditional variance in correlation scale."""

    mean_weights: np.ndarray
    variance_unit: float
    cond_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))


def distance_matrix(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    b = a if b is None else b
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def corr_matrix(phi: float, nu: float, locs: LocationSet) -> np.ndarray:
    # unique distances are cached on the location set; the result is exactly symmetric
    values, inverse = locs._distance_table
    return matern_corr(phi, nu, values)[inverse]


def cov_matrix(params: KernelParams, locs: LocationSet) -> np.ndarray:
    """Dense covariance ``K[i, j] = matern_cov(params, |s_i - s_j|)``."""
    return params.sigma2 * corr_matrix(params.phi, params.nu, locs)


def _cholesky(matrix: np.ndarray) -> np.ndarray:
    factor, info = scipy.linalg.lapack.dpotrf(matrix, lower=1, clean=1)
    if info > 0:
        raise NumericalError(f"Cholesky failed: leading minor {info} is not positive definite")
    if info < 0:
        raise ValueError(f"invalid argument {-info} to dpotrf")
    return factor


def cholesky_factor(params: KernelParams, locs: LocationSet) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^T = cov_matrix(params, locs)``."""
    return _cholesky(cov_matrix(params, locs))


def simulate(
    params: KernelParams,
    locs: LocationSet,
    seed: int | Sequence[int] = 0,
    factor: np.ndarray | None = None,
) -> GPSample:
    """Draw ``Y = L Z`` with ``Z`` standard normal from a Philox stream.

    ``seed`` may be an int or a tuple of ints (e.g. campaign seed plus
    replicate keys); the same seed always gives the same sample.  A
    precomputed Cholesky ``factor`` may be passed to skip refactorisation.
    """
    keys = (seed,) if np.ndim(seed) == 0 else tuple(seed)
    if factor is None:
        factor = cholesky_factor(params, locs)
    z = make_rng(*keys).standard_normal(locs.n)
    return GPSample(factor @ z, locs, tuple(int(k) for k in keys), params)


def _check_conditioning(sub: np.ndarray):
    rcond = 1.0 / np.linalg.cond(sub)
    if not rcond >= RCOND_MIN:
        raise NumericalError(f"conditioning system is ill-conditioned (rcond={rcond:.3e})")


def kriging_moments(
    weights_kernel: KernelParams,
    target_index: int,
    cond_indices,
    locs: LocationSet,
) -> ConditionalMoments:
    """Simple-kriging weights and unit-variance conditional variance.

    An empty conditioning set gives no weights and ``variance_unit == 1``.

    Raises
    ------
    NumericalError
        If the conditioning correlation matrix is numerically singular.
    """
    cond = np.asarray(cond_indices, dtype=np.intp).ravel()
    if target_index in set(cond.tolist()):
        raise ValueError("conditioning set must exclude the target")
    if cond.size == 0:
        return ConditionalMoments(np.empty(0), 1.0, cond)
    phi, nu = weights_kernel.phi, weights_kernel.nu
    pts = locs.points
    sub = matern_corr(phi, nu, distance_matrix(pts[cond]))
    cross = matern_corr(phi, nu, distance_matrix(pts[cond], pts[[target_index]])).ravel()
    _check_conditioning(sub)
    weights = scipy.linalg.solve(sub, cross, assume_a="pos")
    variance = 1.0 - cross @ weights
    if not variance > 0:
        raise NumericalError(f"nonpositive conditional variance at site {target_index}")
    return ConditionalMoments(weights, float(variance), cond)


def cross_error_variance(
    weights_kernel: KernelParams,
    eval_kernel: KernelParams,
    target_index: int,
    cond_indices,
    locs: LocationSet,
) -> float:
    """``E_eval (y_i - w^T y_S)^2`` with ``w`` the kriging weights under ``weights_kernel``."""
    moments = kriging_moments(weights_kernel, target_index, cond_indices, locs)
    cond = moments.cond_indices
    if cond.size == 0:
        return eval_kernel.sigma2
    pts = locs.points
    w = moments.mean_weights
    k_cc = eval_kernel.sigma2 * matern_corr(eval_kernel.phi, eval_kernel.nu, distance_matrix(pts[cond]))
    k_ct = eval_kernel.sigma2 * matern_corr(
        eval_kernel.phi, eval_kernel.nu, distance_matrix(pts[cond], pts[[target_index]])
    ).ravel()
    return float(max(eval_kernel.sigma2 - 2.0 * w @ k_ct + w @ k_cc @ w, 0.0))
