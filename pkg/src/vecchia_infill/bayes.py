"""Random-walk Metropolis over (phi, sigma2) with full or Vecchia likelihoods.

Chains move on ``(log phi, log sigma2)`` with Gaussian proposals.  The
proposal covariance may be re-estimated from each chain's own history during
warm-up; it is frozen for the retained half so the kernel keeps the target
invariant there.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .gp import GPSample, NumericalError, make_rng
from .matern import KernelParams
from .vecchia import NeighborPlan, exact_loglik, nearest_neighbors, vecchia_loglik

__all__ = [
    "PriorSpec",
    "ChainConfig",
    "Chain",
    "ChainSet",
    "parse_tag",
    "log_posterior",
    "run_metropolis",
    "run_chains",
    "split_rhat",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorSpec:
    """Half-normal prior on ``sigma2`` and gamma prior on ``phi``.

    ``sigma2_scale`` is the scale of the half-normal on ``sigma2`` itself;
    the gamma prior uses shape/rate.
    """

    sigma2_scale: float = 2.0 * math.sqrt(3.0)
    phi_shape: float = 5.0
    phi_rate: float = 0.5

    def log_prior_sigma2(self, sigma2: float) -> float:
        return float(stats.halfnorm.logpdf(sigma2, scale=self.sigma2_scale))

    def log_prior_phi(self, phi: float) -> float:
        return float(stats.gamma.logpdf(phi, a=self.phi_shape, scale=1.0 / self.phi_rate))


def parse_tag(tag: str) -> int | None:
    """``"full"`` -> None, ``"vecchia-8"`` -> 8."""
    if tag == "full":
        return None
    prefix, _, k = tag.partition("-")
    if prefix != "vecchia" or not k.isdigit() or int(k) < 1:
        raise ValueError(f"likelihood tag must be 'full' or 'vecchia-<k>', got {tag!r}")
    return int(k)


def log_posterior(
    state: tuple[float, float],
    tag: str,
    plan: NeighborPlan | None,
    sample: GPSample,
    priors: PriorSpec = PriorSpec(),
    nu: float | None = None,
) -> float:
    """Log posterior density of ``(phi, log sigma2)``, up to a constant.

    Sum of the log-likelihood, both log priors and ``log sigma2`` (the
    Jacobian of the log transform).  Failed factorisations give ``-inf``.
    ``nu`` defaults to the smoothness recorded on ``sample``.
    """
    phi, log_s2 = state
    if not phi > 0:
        return -math.inf
    nu = sample.params.nu if nu is None else nu
    sigma2 = math.exp(log_s2)
    try:
        params = KernelParams(sigma2, phi, nu)
        if parse_tag(tag) is None:
            ll = exact_loglik(params, sample)
        else:
            ll = vecchia_loglik(params, plan, sample)
    except (NumericalError, ValueError) as exc:
        if isinstance(exc, ValueError) and "likelihood tag" in str(exc):
            raise
        log.warning("log posterior rejected phi=%.6g sigma2=%.6g: %s", phi, sigma2, exc)
        return -math.inf
    return ll + priors.log_prior_sigma2(sigma2) + priors.log_prior_phi(phi) + log_s2


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 2000
    chains: int = 3
    step: tuple = (0.1, 0.1)
    seed: int = 0
    adapt: bool = True
    init_spread: float = 0.1

    def __post_init__(self):
        if self.iterations < 100:
            raise ValueError("iterations must be at least 100")
        if self.chains < 1:
            raise ValueError("need at least one chain")


@dataclass(frozen=True, eq=False)
class Chain:
    """Draws of ``(phi, log sigma2)``; the first ``warmup`` are discarded."""

    draws: np.ndarray
    log_post: np.ndarray
    acceptance: float
    seed: tuple
    tag: str
    warmup: int
    warnings: tuple = ()

    @property
    def retained(self) -> np.ndarray:
        return self.draws[self.warmup :]

    def phi(self) -> np.ndarray:
        return self.retained[:, 0]

    def sigma2(self) -> np.ndarray:
        return np.exp(self.retained[:, 1])


@dataclass(frozen=True, eq=False)
class ChainSet:
    chains: list
    rhat: dict
    tag: str
    seed: int
    config: ChainConfig = field(repr=False)

    def pooled(self, name: str) -> np.ndarray:
        return np.concatenate([_param(c, name) for c in self.chains])


def _param(chain: Chain, name: str, nu: float | None = None) -> np.ndarray:
    if name == "phi":
        return chain.phi()
    if name == "sigma2":
        return chain.sigma2()
    if name == "log_sigma2":
        return chain.retained[:, 1]
    raise KeyError(name)


def split_rhat(draws: np.ndarray) -> float:
    """Split potential scale reduction for an ``(m, n)`` array of chains."""
    draws = np.asarray(draws, dtype=float)
    m, n = draws.shape
    half = n // 2
    if half < 2:
        raise ValueError("chains are too short for split R-hat")
    split = np.concatenate([draws[:, :half], draws[:, n - half :]], axis=0)
    length = split.shape[1]
    within = split.var(axis=1, ddof=1).mean()
    between = length * split.mean(axis=1).var(ddof=1)
    if within == 0:
        return math.inf if between > 0 else 1.0
    var_plus = (length - 1) / length * within + between / length
    return float(math.sqrt(var_plus / within))


def run_metropolis(
    log_target: Callable[[np.ndarray], float],
    init: np.ndarray,
    iterations: int,
    step,
    rng: np.random.Generator,
    adapt_until: int = 0,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Gaussian random-walk Metropolis in R^d.

    ``step`` is a vector of proposal scales or a full covariance matrix.
    While ``t < adapt_until`` the covariance is refreshed every 100 steps
    (after the first 200) from the chain's history as ``2.38^2/d`` times
    the empirical covariance.  Returns draws, log targets and the
    acceptance rate over the non-adaptive part (whole chain if none).
    """
    x = np.array(init, dtype=float)
    d = x.size
    step = np.asarray(step, dtype=float)
    cov = np.diag(step**2) if step.ndim == 1 else step
    chol = np.linalg.cholesky(cov)
    lp = log_target(x)
    if not math.isfinite(lp):
        raise NumericalError("initial state has zero posterior density")
    draws = np.empty((iterations, d))
    lps = np.empty(iterations)
    accepted = 0
    counted = 0
    for t in range(iterations):
        if t < adapt_until and t >= 200 and t % 100 == 0:
            emp = np.cov(draws[t // 2 : t].T).reshape(d, d)
            proposal = (2.38**2 / d) * emp + 1e-8 * np.eye(d)
            try:
                chol = np.linalg.cholesky(proposal)
            except np.linalg.LinAlgError:
                pass
        prop = x + chol @ rng.standard_normal(d)
        lp_prop = log_target(prop)
        ok = math.log(rng.uniform()) < lp_prop - lp
        if ok:
            x, lp = prop, lp_prop
        if t >= adapt_until:
            counted += 1
            accepted += ok
        draws[t] = x
        lps[t] = lp
    return draws, lps, accepted / max(counted, 1)


def run_chains(
    sample: GPSample,
    tag: str,
    config: ChainConfig = ChainConfig(),
    priors: PriorSpec = PriorSpec(),
    nu: float | None = None,
    init: tuple[float, float] | None = None,
    loglik: Callable[[float, float], float] | None = None,
) -> ChainSet:
    """Run ``config.chains`` Metropolis chains on the posterior of ``(phi, sigma2)``.

    Chain ``c`` draws from the Philox stream keyed ``(seed, c)``, so a given
    seed reproduces every chain bit for bit, and different likelihood tags
    see common random numbers.  ``init`` is ``(phi, sigma2)``; each chain
    starts from it perturbed on the log scale by ``init_spread``.  Passing
    ``loglik(phi, sigma2)`` replaces the Gaussian-process likelihood.
    """
    nu = sample.params.nu if nu is None else nu
    k = parse_tag(tag)
    plan = None if k is None else nearest_neighbors(sample.locations, k)

    if loglik is None:
        def target(u):
            return log_posterior((math.exp(u[0]), u[1]), tag, plan, sample, priors, nu) + u[0]
    else:
        def target(u):
            phi, s2 = math.exp(u[0]), math.exp(u[1])
            return loglik(phi, s2) + priors.log_prior_sigma2(s2) + priors.log_prior_phi(phi) + u[0] + u[1]

    if init is None:
        init = (priors.phi_shape / priors.phi_rate, 1.0)
    centre = np.array([math.log(init[0]), math.log(init[1])])
    warmup = config.iterations // 2
    chains = []
    for c in range(config.chains):
        key = (config.seed, c)
        rng = make_rng(*key)
        start = centre + config.init_spread * rng.standard_normal(2)
        draws_u, lps, acc = run_metropolis(
            target, start, config.iterations, np.asarray(config.step), rng, warmup if config.adapt else 0
        )
        draws = np.column_stack([np.exp(draws_u[:, 0]), draws_u[:, 1]])
        notes = []
        if acc < 0.01 or acc > 0.99:
            notes.append(f"acceptance rate {acc:.3f} outside [0.01, 0.99]; adjust step sizes")
            log.warning("chain %d (%s): %s", c, tag, notes[-1])
        chains.append(Chain(draws, lps, acc, key, tag, warmup, tuple(notes)))
    rhat = {
        name: split_rhat(np.stack([_param(ch, name) for ch in chains])) if config.chains > 1 else math.nan
        for name in ("phi", "sigma2")
    }
    return ChainSet(chains, rhat, tag, config.seed, config)
