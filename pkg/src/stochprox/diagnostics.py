"""Empirical verification tooling and model selection.

Covers the quantitative behavior the engines are expected to show:
decay rates of the statistic error across replicated runs, agreement of
the four algorithms' limits, and EBIC-driven regularization paths with
warm starts.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import rng as rngmod
from .engine import EngineConfig, RunTrace, run, support_set
from .model_api import Model, gradient_surrogate
from .penalty import PenaltySpec
from .pk import R_LATENT, PkModel, conc_batch_with_fallback
from .schedules import ScheduleSpec

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# rate experiments


def fit_loglog_slope(ns: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of log(ys) against log(ns)."""
    ns = np.asarray(ns, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = (ns > 0) & (ys > 0)
    x = np.log(ns[keep])
    y = np.log(ys[keep])
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def predicted_l2_slope(algorithm: str, sched: ScheduleSpec) -> float:
    """Theoretical log-log slope of the statistic-error L2 norm."""
    if algorithm in ("mcpg", "mcem-pen"):
        return -sched.c / 2.0
    if algorithm in ("sapg", "saem-pen"):
        return -min(2.0 * (sched.alpha - sched.beta), sched.beta + sched.c) / 2.0
    return 0.0


@dataclass
class RateReport:
    algorithm: str
    iterations: np.ndarray
    l2: np.ndarray  # sqrt of mean squared error per iteration
    slope: float
    intercept: float
    predicted_slope: float
    replicates: int


def _rate_worker(args) -> np.ndarray:
    model, config, seed = args
    trace = run(model, replace(config, seed=seed))
    errs = np.array(
        [e if e is not None else np.nan for e in trace.stat_error], dtype=float
    )
    return errs**2


def rate_experiment(
    model: Model,
    config: EngineConfig,
    replicates: int = 30,
    tail_fraction: float = 0.5,
    threads: int = 1,
) -> RateReport:
    """Replicated decay measurement of ||S_{n+1} - mean stat(theta_n)||.

    Runs ``replicates`` seeded copies of the configured algorithm,
    averages squared errors per iteration, and fits a log-log slope over
    the trailing ``tail_fraction`` of iterations.
    """
    if model.exact_mean_stat(np.zeros(model.dim_theta)) is None:
        raise ValueError("rate_experiment needs the exact mean-statistic oracle")
    if replicates < 1:
        raise ValueError("need at least one replicate")
    jobs = [(model, config, config.seed + i) for i in range(replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            sq = list(pool.map(_rate_worker, jobs))
    else:
        sq = [_rate_worker(j) for j in jobs]
    mean_sq = np.mean(np.stack(sq), axis=0)
    l2 = np.sqrt(mean_sq)
    ns = np.arange(1, l2.shape[0] + 1)
    lo = int(l2.shape[0] * (1.0 - tail_fraction))
    slope, intercept = fit_loglog_slope(ns[lo:], l2[lo:])
    return RateReport(
        algorithm=config.algorithm,
        iterations=ns,
        l2=l2,
        slope=slope,
        intercept=intercept,
        predicted_slope=predicted_l2_slope(config.algorithm, config.schedule),
        replicates=replicates,
    )


# ---------------------------------------------------------------------------
# cross-algorithm limit agreement


@dataclass
class AgreementReport:
    reference_theta: np.ndarray
    max_deviation: dict
    supports_identical: dict
    supports: dict


def limit_agreement(
    model: Model,
    configs: dict,
    tol: float = 1e-2,
    reference: str = "em-pen",
) -> AgreementReport:
    """Run every configured algorithm and compare limits to the reference."""
    if reference not in configs:
        raise ValueError(f"configs must include the reference {reference!r}")
    traces = {name: run(model, cfg) for name, cfg in configs.items()}
    mask = configs[reference].penalty.mask
    if mask is None:
        mask = model.default_mask()
    ref_theta = traces[reference].theta_final
    ref_support = support_set(ref_theta, mask)
    max_dev = {}
    same_support = {}
    supports = {reference: ref_support}
    for name, tr in traces.items():
        if name == reference:
            continue
        th = tr.theta_final
        max_dev[name] = float(np.max(np.abs(th - ref_theta)))
        sup = support_set(th, mask)
        supports[name] = sup
        same_support[name] = bool(np.array_equal(sup, ref_support))
    return AgreementReport(
        reference_theta=ref_theta,
        max_deviation=max_dev,
        supports_identical=same_support,
        supports=supports,
    )


# ---------------------------------------------------------------------------
# model selection


def ebic(
    loglik_hat: float,
    support_size: int,
    n_subjects: int,
    n_candidates: int,
    gamma_e: float = 0.5,
) -> float:
    """Extended BIC: -2 loglik + k log N + 2 gamma_e k log p."""
    if support_size < 0 or n_subjects < 1 or n_candidates < 1:
        raise ValueError("invalid EBIC arguments")
    if not 0.0 <= gamma_e <= 1.0:
        raise ValueError("gamma_e must lie in [0, 1]")
    return float(
        -2.0 * loglik_hat
        + support_size * math.log(n_subjects)
        + 2.0 * gamma_e * support_size * math.log(n_candidates)
    )


def is_loglik_pk(
    model: PkModel,
    theta: np.ndarray,
    centers: np.ndarray,
    spreads: np.ndarray,
    n_particles: int = 1000,
    seed: int = 0,
) -> float:
    """Importance-sampling marginal log-likelihood for the PK model.

    Per subject, particles are drawn from a Gaussian centered at the
    supplied latent location estimates; weights combine the observation
    likelihood and the latent prior.  The particle stream depends only on
    (seed, subject), so estimates are comparable across a penalty grid.
    """
    ds = model.dataset
    _, sig, sigma_res = model.split(theta)
    pm = model.prior_mean(theta)
    n, J = ds.N, ds.J
    total = 0.0
    log_prior_const = float(np.sum(np.log(sig))) - 0.5 * R_LATENT * math.log(
        2.0 * math.pi
    )
    log_lik_const = -J * math.log(sigma_res) - 0.5 * J * math.log(2.0 * math.pi)
    for k in range(n):
        gen = rngmod.substream(seed, rngmod.EBIC_PARTICLES, k)
        eps = gen.standard_normal((n_particles, R_LATENT))
        z = centers[k][None, :] + spreads[k][None, :] * eps
        pred = conc_batch_with_fallback(z, ds.times[k], ds.dose)
        sse = np.sum((ds.Y[k][None, :] - pred) ** 2, axis=1)
        log_lik = log_lik_const - 0.5 * sse / sigma_res**2
        dz = z * sig[None, :] - pm[k][None, :]
        log_prior = log_prior_const - 0.5 * np.sum(dz**2, axis=1)
        log_q = (
            -float(np.sum(np.log(spreads[k])))
            - 0.5 * R_LATENT * math.log(2.0 * math.pi)
            - 0.5 * np.sum(eps**2, axis=1)
        )
        total += float(logsumexp(log_lik + log_prior - log_q)) - math.log(
            n_particles
        )
    return total


def pk_loglik_estimator(
    model: PkModel, n_particles: int = 1000, seed: int = 0
) -> Callable[[np.ndarray, RunTrace], float]:
    """Build the marginal-likelihood estimator used along a penalty grid.

    Proposal centers/spreads come from the fitted chain state (posterior
    location and scale estimates); the seed is fixed so the whole grid
    shares one particle stream.
    """

    def estimate(theta: np.ndarray, trace: RunTrace) -> float:
        state = trace.meta["checkpoint"]["mcmc"]
        if state is None:
            raise ValueError("PK likelihood estimation needs an MCMC run")
        centers = state.z
        spreads = np.maximum(1.5 * state.rw_sd, 0.05)
        return is_loglik_pk(
            model, theta, centers, spreads, n_particles=n_particles, seed=seed
        )

    return estimate


def exact_loglik_estimator(model: Model) -> Callable[[np.ndarray, RunTrace], float]:
    def estimate(theta: np.ndarray, trace: RunTrace) -> float:
        val = model.exact_loglik(theta)
        if val is None:
            raise ValueError("model has no exact log-likelihood")
        return val

    return estimate


def default_loglik_estimator(model, n_particles=1000, seed=0):
    if model.exact_loglik(model.project_domain(np.zeros(model.dim_theta))) is not None:
        return exact_loglik_estimator(model)
    return pk_loglik_estimator(model, n_particles=n_particles, seed=seed)


# ---------------------------------------------------------------------------
# regularization paths


def lambda_grid(lam_max: float, length: int = 40, min_ratio: float = 0.01):
    """Geometric grid from lam_max down to lam_max * min_ratio."""
    if lam_max <= 0 or length < 1 or not 0 < min_ratio < 1:
        raise ValueError("invalid grid parameters")
    return lam_max * min_ratio ** (np.arange(length) / max(length - 1, 1))


def estimate_lambda_max(
    model: Model,
    config: EngineConfig,
    pilot_iters: int = 200,
) -> float:
    """KKT threshold estimate: largest penalized-score magnitude at the
    intercept-only fit (obtained by running with an effectively infinite
    penalty)."""
    mask = config.penalty.mask
    if mask is None:
        mask = model.default_mask()
    frozen_pen = replace(config.penalty, lam=1e12, mask=mask)
    pilot = replace(
        config, penalty=frozen_pen, max_iter=pilot_iters, track_stat_error=False
    )
    trace = run(model, pilot)
    theta0 = trace.theta_final
    sbar = model.exact_mean_stat(theta0)
    if sbar is None:
        sbar = trace.meta["checkpoint"]["stat"]
    grad = gradient_surrogate(model, theta0, sbar)
    return float(np.max(np.abs(grad[mask])))


@dataclass
class PathReport:
    lambdas: np.ndarray
    thetas: list
    supports: list
    support_sizes: np.ndarray
    logliks: np.ndarray
    ebics: np.ndarray
    selected_index: int
    failures: dict = field(default_factory=dict)

    @property
    def selected_lambda(self) -> float:
        return float(self.lambdas[self.selected_index])


def reg_path(
    model: Model,
    config: EngineConfig,
    lambdas: Sequence[float],
    gamma_e: float = 0.5,
    loglik_fn: Optional[Callable] = None,
    iters_after_first: Optional[int] = None,
    warm_start: bool = True,
) -> PathReport:
    """Warm-started fits over a decreasing penalty grid, scored by EBIC.

    Each fit reuses the previous solution (parameter, running statistic
    and chain state) as its starting point; per-lambda failures are
    recorded and the path continues.
    """
    lambdas = np.asarray(sorted(lambdas, reverse=True), dtype=float)
    if np.any(np.diff(lambdas) >= 0):
        raise ValueError("lambda grid must be strictly decreasing")
    mask = config.penalty.mask
    if mask is None:
        mask = model.default_mask()
    if loglik_fn is None:
        loglik_fn = default_loglik_estimator(model)
    n_candidates = int(np.sum(mask))

    thetas, supports, logliks, ebics = [], [], [], []
    failures = {}
    carry: dict = {}
    for i, lam in enumerate(lambdas):
        cfg = replace(
            config,
            penalty=replace(config.penalty, lam=float(lam), mask=mask),
            max_iter=(
                config.max_iter
                if (i == 0 or not warm_start or iters_after_first is None)
                else iters_after_first
            ),
            **carry,
        )
        try:
            trace = run(model, cfg)
            theta = trace.theta_final
            sup = support_set(theta, mask)
            ll = loglik_fn(theta, trace)
            crit = ebic(ll, int(sup.size), _n_subjects(model), n_candidates, gamma_e)
            if warm_start:
                ck = trace.meta["checkpoint"]
                carry = {
                    "init_theta": theta,
                    "init_stat": ck["stat"],
                    "init_latent": ck["mcmc"].z.copy() if ck["mcmc"] is not None else None,
                }
        except Exception as exc:  # noqa: BLE001 - per-point failures recorded
            log.warning("path point lambda=%.4g failed: %s", lam, exc)
            failures[i] = str(exc)
            thetas.append(None)
            supports.append(None)
            logliks.append(np.nan)
            ebics.append(np.nan)
            continue
        thetas.append(theta)
        supports.append(sup)
        logliks.append(ll)
        ebics.append(crit)

    ebics = np.asarray(ebics, dtype=float)
    if np.all(np.isnan(ebics)):
        raise RuntimeError("every path point failed")
    selected = int(np.nanargmin(ebics))
    sizes = np.array(
        [(-1 if s is None else s.size) for s in supports], dtype=int
    )
    return PathReport(
        lambdas=lambdas,
        thetas=thetas,
        supports=supports,
        support_sizes=sizes,
        logliks=np.asarray(logliks, dtype=float),
        ebics=ebics,
        selected_index=selected,
        failures=failures,
    )


def _n_subjects(model: Model) -> int:
    return model.dataset.N if hasattr(model, "dataset") else 1
