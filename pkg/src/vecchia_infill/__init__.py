"""Vecchia likelihood approximation for Matern Gaussian processes under infill asymptotics."""

__version__ = "0.1.0"

from .matern import (  # noqa: E402
    KernelParams,
    MicroergodicValue,
    calibrate_phi,
    equivalent_sigma2,
    matern_corr,
    matern_cov,
    microergodic,
    spectral_density,
)
from .bessel import bessel_k  # noqa: E402
from .gp import (  # noqa: E402
    GPSample,
    LocationSet,
    NumericalError,
    cov_matrix,
    cross_error_variance,
    grid_1d,
    grid_1d_lattice,
    grid_2d,
    kriging_moments,
    simulate,
)
from .vecchia import (  # noqa: E402
    NeighborPlan,
    VecchiaFactor,
    exact_loglik,
    fit_phi,
    full_plan,
    k_schedule,
    nearest_neighbors,
    profile_loglik,
    sigma2_hat_vecch,
    vecchia_factor,
    vecchia_loglik,
)
