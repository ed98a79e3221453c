"""Command-line entry point: ``vecchia-infill <study> [options]``.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from scipy.stats import wasserstein_distance

from . import __version__
from .artifacts import read_sample, write_csv, write_json, write_sample
from .asymptotics import CampaignConfig, assumption1_stat, cn_campaign
from .bayes import ChainConfig, run_chains
from .config import PRESETS, STUDIES, StudyConfig, load_config
from .diagnostics import adequacy_report
from .gp import NumericalError, grid_1d, grid_1d_lattice, grid_2d, simulate
from .matern import KernelParams, calibrate_phi
from .vecchia import BoundaryWarning, fit_phi, k_schedule, nearest_neighbors

OUTPUT_ENV = "VECCHIA_INFILL_OUTPUT_DIR"
SEEDED = {"cn-study", "residual-acf", "posterior", "simulate"}

log = logging.getLogger("vecchia_infill")


class ConfigError(Exception):
    pass


def _locations(config: StudyConfig, size: int):
    if config.dim == 2:
        return grid_2d(size)
    return grid_1d_lattice(size) if config.grid == "lattice" else grid_1d(size)


def _design(config: StudyConfig) -> KernelParams:
    nu = config.nus[0]
    phi = config.phi if config.phi is not None else calibrate_phi(nu, config.calibration_distance, config.calibration_level)
    return KernelParams(config.sigma2, phi, nu)


def cmd_assumption_check(config: StudyConfig, out: Path, workers: int) -> list[Path]:
    rows = []
    for nu in config.nus:
        phi0 = config.phi if config.phi is not None else calibrate_phi(nu, config.calibration_distance, config.calibration_level)
        theta0 = KernelParams(config.sigma2, phi0, nu)
        for n in config.sizes:
            try:
                stat = assumption1_stat(theta0, config.phi1_factor * phi0, _locations(config, n))
            except NumericalError as exc:
                raise NumericalError(f"cell (nu={nu}, n={n}): {exc}") from exc
            rows.append((nu, n, stat))
    return [write_csv(out / "assumption_check.csv", ["nu", "n", "stat"], rows, config.resolved())]


def cmd_cn_study(config: StudyConfig, out: Path, workers: int) -> list[Path]:
    campaign = CampaignConfig(
        dim=config.dim,
        sizes=tuple(config.sizes),
        nus=tuple(config.nus),
        replicates=config.replicates,
        seed=config.seed,
        calibration_distance=config.calibration_distance,
        calibration_level=config.calibration_level,
        sigma2=config.sigma2,
        k_rule=config.k_rule,
        k_param=config.k_param,
        phi1_factor=config.phi1_factor,
    )
    results = cn_campaign(campaign, workers=workers)
    resolved = config.resolved()
    summary_cols = ["dim", "n", "nu", "k", "mean_cn", "sd_cn", "replicates", "seed"]
    summary = write_csv(out / "cn_study.csv", summary_cols, ([r.row()[c] for c in summary_cols] for r in results), resolved)
    reps = write_csv(
        out / "cn_replicates.csv",
        ["dim", "n", "nu", "replicate", "cn"],
        ((r.dim, r.n, r.nu, i, float(v)) for r in results for i, v in enumerate(r.values)),
        resolved,
    )
    return [summary, reps]


def cmd_residual_acf(config: StudyConfig, out: Path, workers: int) -> list[Path]:
    params = _design(config)
    locs = _locations(config, config.sizes[0])
    sample = simulate(params, locs, config.seed)
    plans = [nearest_neighbors(locs, k) for k in config.k_values]
    lo, hi = config.bracket_factors
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        rows = adequacy_report(params, plans, sample, config.band, config.max_lag, (lo * params.phi, hi * params.phi))
    resolved = config.resolved()
    paths = [
        write_csv(out / "acf.csv", ["k", "lag", "acf"], ((r.k, lag, float(v)) for r in rows for lag, v in enumerate(r.acf)), resolved)
    ]
    for r in rows:
        paths.append(write_csv(out / f"acf_k{r.k}.csv", ["lag", "acf"], ((lag, float(v)) for lag, v in enumerate(r.acf)), resolved))
    cols = ["k", "phi_hat", "sigma2_hat", "inside_fraction", "max_abs_acf", "boundary"]
    paths.append(write_csv(out / "acf_summary.csv", cols, ([r.summary()[c] for c in cols] for r in rows), resolved))
    paths.append(write_json(out / "fit.json", {"per_k": [r.summary() for r in rows], "true": vars(params)}, resolved))
    return paths


def _quantiles(x: np.ndarray) -> dict:
    q = np.quantile(x, [0.025, 0.5, 0.975])
    return {"mean": float(np.mean(x)), "sd": float(np.std(x, ddof=1)), "q025": float(q[0]), "q50": float(q[1]), "q975": float(q[2])}


def cmd_posterior(config: StudyConfig, out: Path, workers: int) -> list[Path]:
    params = _design(config)
    locs = _locations(config, config.sizes[0])
    sample = simulate(params, locs, config.seed)
    chain_cfg = ChainConfig(config.iterations, config.chains, tuple(config.step), config.seed, config.adapt)
    resolved = config.resolved()
    paths, summary, micro = [], {}, {}
    for tag in config.likelihoods:
        cs = run_chains(sample, tag, chain_cfg, nu=params.nu)
        rows = (
            (c, t, float(ch.draws[t, 0]), float(np.exp(ch.draws[t, 1])), float(ch.log_post[t]))
            for c, ch in enumerate(cs.chains)
            for t in range(ch.draws.shape[0])
        )
        paths.append(write_csv(out / f"draws_{tag}.csv", ["chain", "iteration", "phi", "sigma2", "log_post"], rows, resolved))
        phi, s2 = cs.pooled("phi"), cs.pooled("sigma2")
        micro[tag] = s2 * phi ** (2 * params.nu)
        summary[tag] = {
            "phi": _quantiles(phi),
            "sigma2": _quantiles(s2),
            "log_sigma2": _quantiles(np.log(s2)),
            "microergodic": _quantiles(micro[tag]),
            "rhat": cs.rhat,
            "acceptance": [c.acceptance for c in cs.chains],
            "warnings": [w for c in cs.chains for w in c.warnings],
            "warmup": cs.chains[0].warmup,
        }
    if "full" in micro:
        for tag in micro:
            summary[tag]["w1_microergodic_vs_full"] = float(wasserstein_distance(micro[tag], micro["full"]))
    paths.append(write_json(out / "posterior_summary.json", {"true": vars(params), "tags": summary}, resolved))
    return paths


def cmd_simulate(config: StudyConfig, out: Path, workers: int) -> list[Path]:
    params = _design(config)
    sample = simulate(params, _locations(config, config.sizes[0]), config.seed)
    return [write_sample(out / "sample.csv", sample, config.resolved())]


def cmd_fit(config: StudyConfig, out: Path, workers: int) -> list[Path]:
    try:
        sample = read_sample(Path(config.input))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"input: cannot read sample file {config.input}: {exc}") from exc
    nu = config.nus[0]
    if config.phi is not None:
        phi_ref = config.phi
    elif sample.params is not None:
        phi_ref = sample.params.phi
    else:
        phi_ref = calibrate_phi(nu, config.calibration_distance, config.calibration_level)
    k = k_schedule(sample.n, config.k_rule, config.k_param)
    plan = nearest_neighbors(sample.locations, k, config.k_rule)
    lo, hi = config.bracket_factors
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        fit = fit_phi(nu, plan, sample, (lo * phi_ref, hi * phi_ref))
    payload = {
        "phi_hat": fit.phi,
        "sigma2_hat": fit.sigma2,
        "microergodic_hat": fit.microergodic_value(nu),
        "profile_loglik": fit.profile,
        "boundary": fit.boundary,
        "nu": nu,
        "k": k,
        "n": sample.n,
        "locations": sample.locations.to_dict(),
        "input": config.input,
    }
    if sample.params is not None:
        payload["true_microergodic"] = sample.params.sigma2 * sample.params.phi ** (2 * sample.params.nu)
    return [write_json(out / "estimate.json", payload, config.resolved())]


COMMANDS = {
    "assumption-check": cmd_assumption_check,
    "cn-study": cmd_cn_study,
    "residual-acf": cmd_residual_acf,
    "posterior": cmd_posterior,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vecchia-infill", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="study", required=True)
    for name in STUDIES:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file, or any CSV/JSON artifact to replay its embedded config")
        p.add_argument("--preset", choices=sorted(PRESETS), help="start from a built-in study design")
        p.add_argument("--seed", type=int, help="campaign seed" + (" (required)" if name in SEEDED else ""))
        p.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ENV} or ./results)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        p.add_argument("--replicates", type=int)
        p.add_argument("--input", help="sample CSV for fit")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _field_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "config"
        lines.append(f"  {where}: {err['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.study in SEEDED and args.seed is None:
            raise ConfigError(f"seed: --seed is required for {args.study}")
        overrides = {"seed": args.seed, "replicates": args.replicates, "input": args.input}
        config = load_config(args.config, args.preset, overrides, study=args.study)
    except ValidationError as exc:
        print(_field_errors(exc), file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2

    out = args.out or Path(os.environ.get(OUTPUT_ENV, "results"))
    try:
        paths = COMMANDS[args.study](config, out, max(1, args.workers))
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
