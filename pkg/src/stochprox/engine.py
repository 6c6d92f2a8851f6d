"""Optimization loops.

Six algorithms share one iteration skeleton (simulate, update the
statistic, maximize):

  pg        exact mean statistic + proximal-gradient step
  mcpg      fresh Monte Carlo batch mean + proximal-gradient step
  sapg      exponentially weighted running average + proximal-gradient step
  em-pen    exact mean statistic + exact penalized M-step
  mcem-pen  batch mean + exact penalized M-step
  saem-pen  running average + exact penalized M-step

Runs are deterministic given (config, seed): all randomness flows through
counter-based streams, and reductions are fixed-order.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as rngmod
from .mcmc import ChainSampler
from .model_api import Model, gradient_surrogate
from .penalty import PenaltySpec, penalty_value, prox
from .schedules import (
    AdaptiveGammaState,
    ScheduleSpec,
    adaptive_gamma_update,
    batch_at,
    delta_at,
    gamma_at,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("pg", "mcpg", "sapg", "saem-pen", "mcem-pen", "em-pen")
GRADIENT_ALGOS = ("pg", "mcpg", "sapg")
EXACT_STAT_ALGOS = ("pg", "em-pen")
SA_ALGOS = ("sapg", "saem-pen")
SUPPORT_EPS = 1e-10
EARLY_STOP_RUN = 50


@dataclass(frozen=True)
class EngineConfig:
    algorithm: str
    schedule: ScheduleSpec = ScheduleSpec()
    penalty: PenaltySpec = PenaltySpec()
    max_iter: int = 500
    seed: int = 0
    init_theta: Optional[np.ndarray] = None
    init_stat: Optional[np.ndarray] = None
    init_latent: Optional[np.ndarray] = None
    sampler: str = "auto"  # auto | exact | mcmc
    rw_sd: float = 0.5
    mcmc_target_rate: float = 0.4
    mcmc_window: int = 50
    mcmc_frozen: bool = False
    track_f: bool = True
    track_stat_error: bool = True
    early_stop_tol: float = 0.0  # 0 disables
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.sampler not in ("auto", "exact", "mcmc"):
            raise ValueError(f"unknown sampler mode {self.sampler!r}")


@dataclass
class RunTrace:
    """Per-iteration record; row i describes theta_i, and the step fields
    of row i describe the update that produced theta_{i+1} (the final row
    has no step fields)."""

    theta: list = field(default_factory=list)
    f_value: list = field(default_factory=list)
    support_size: list = field(default_factory=list)
    stat_error: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    m: list = field(default_factory=list)
    accept_rate: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def theta_final(self) -> np.ndarray:
        return self.theta[-1]

    def support(self, mask: np.ndarray) -> np.ndarray:
        return support_set(self.theta[-1], mask)


def support_set(theta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Indices of penalized coordinates counted as nonzero.

    The prox produces exact zeros, so the threshold only guards float
    noise from non-prox updates.
    """
    return np.flatnonzero(mask & (np.abs(theta) > SUPPORT_EPS))


def stat_update_mc(stats: np.ndarray) -> np.ndarray:
    """Plain Monte Carlo mean of the per-draw statistics (m, q)."""
    stats = np.asarray(stats, dtype=float)
    if stats.ndim != 2 or stats.shape[0] == 0:
        raise ValueError("need a nonempty batch of statistics")
    return stats.mean(axis=0)


def stat_update_sa(
    prev: np.ndarray, stats: np.ndarray, delta: float
) -> np.ndarray:
    """Convex combination (1-delta) prev + delta * batch mean."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    return (1.0 - delta) * np.asarray(prev, dtype=float) + delta * stat_update_mc(
        stats
    )


def pg_step(
    model: Model,
    penalty: PenaltySpec,
    theta: np.ndarray,
    gamma,
    stat_estimate: np.ndarray,
) -> np.ndarray:
    """One proximal-gradient ascent step with scalar or diagonal step size."""
    grad = gradient_surrogate(model, theta, stat_estimate)
    return prox(penalty, gamma, theta + gamma * grad)


def mstep_exact(
    model: Model,
    penalty: PenaltySpec,
    stat_estimate: np.ndarray,
    theta0: np.ndarray,
) -> np.ndarray:
    """Exact penalized M-step (model-specific block solver)."""
    return model.surrogate_argmax(stat_estimate, penalty, theta0)


def _resolve_penalty(model: Model, penalty: PenaltySpec) -> PenaltySpec:
    if penalty.mask is None and penalty.kind != "none":
        return replace(penalty, mask=model.default_mask())
    return penalty


class _ExactSampler:
    """i.i.d. draws from the exact conditional law (unbiased case)."""

    def __init__(self, model: Model, seed: int):
        self.model = model
        self.seed = seed

    def draw_batch(self, theta, m, iteration):
        gen = rngmod.substream(self.seed, rngmod.ENGINE_DRAWS, iteration)
        draws = self.model.exact_draws(theta, m, gen)
        if hasattr(self.model, "stat_batch"):
            stats = self.model.stat_batch(draws)
        else:
            stats = np.stack([self.model.stat(z) for z in draws])
        return draws, stats

    def rw_acceptance_rate(self) -> float:
        return float("nan")


def _f_value(model: Model, penalty: PenaltySpec, theta: np.ndarray):
    ll = model.exact_loglik(theta)
    if ll is None:
        return None
    g = penalty_value(penalty, theta)
    if not g.finite:
        return None
    return float(ll - g.value)


def run(
    model: Model,
    config: EngineConfig,
    resume: Optional[dict] = None,
    checkpoint_cb=None,
) -> RunTrace:
    """Execute the configured loop; returns the trace (theta_0 .. theta_T).

    ``resume`` is a state dict previously handed to ``checkpoint_cb`` (or
    found in trace.meta["checkpoint"]); continuing from it reproduces an
    uninterrupted run bit for bit because all randomness is indexed by the
    iteration counter.
    """
    sched, pen = config.schedule, _resolve_penalty(model, config.penalty)
    algo = config.algorithm

    theta = (
        np.asarray(config.init_theta, dtype=float).copy()
        if config.init_theta is not None
        else model.default_init()
        if hasattr(model, "default_init")
        else np.zeros(model.dim_theta)
    )
    if theta.shape[0] != model.dim_theta:
        raise ValueError(
            f"init_theta has dimension {theta.shape[0]}, model wants {model.dim_theta}"
        )
    theta = model.project_domain(theta)

    needs_exact = algo in EXACT_STAT_ALGOS
    if needs_exact and model.exact_mean_stat(theta) is None:
        raise ValueError(f"{algo} requires the exact mean-statistic oracle")

    L = model.lipschitz_L()
    if algo in GRADIENT_ALGOS and not sched.adaptive:
        if L is not None and gamma_at(sched, 0) > 1.0 / L:
            log.warning(
                "initial step size %.3g exceeds 1/L = %.3g; transient may be unstable",
                gamma_at(sched, 0), 1.0 / L,
            )
        elif L is None:
            log.warning("Lipschitz constant unavailable; step sizes unguarded")

    sampler = None
    if algo not in EXACT_STAT_ALGOS:
        z0 = (
            np.asarray(config.init_latent, dtype=float)
            if config.init_latent is not None
            else model.init_latent(theta)
        )
        mode = config.sampler
        if mode == "auto":
            probe = model.exact_draws(
                theta, 0, rngmod.substream(config.seed, rngmod.GENERIC)
            )
            mode = "exact" if probe is not None else "mcmc"
        if mode == "exact":
            sampler = _ExactSampler(model, config.seed)
        else:
            sampler = ChainSampler(
                model, config.seed, z0,
                rw_sd=config.rw_sd,
                target_rate=config.mcmc_target_rate,
                window=config.mcmc_window,
                frozen=config.mcmc_frozen,
            )
        if config.init_stat is not None:
            S = np.asarray(config.init_stat, dtype=float).copy()
        else:
            S = model.stat(z0)
    else:
        S = model.exact_mean_stat(theta)

    gamma_state = AdaptiveGammaState()
    trace = RunTrace()
    trace.meta = {
        "algorithm": algo,
        "seed": config.seed,
        "lipschitz_L": L,
        "projections": 0,
        "n_bad_proposals": 0,
        "stopped_early_at": None,
    }
    mask = pen.mask_for(model.dim_theta) if pen.kind != "none" else np.zeros(
        model.dim_theta, dtype=bool
    )
    trace.theta.append(theta.copy())
    trace.f_value.append(_f_value(model, pen, theta) if config.track_f else None)
    trace.support_size.append(int(support_set(theta, mask).size))

    start_iter = 0
    small_steps = 0
    if resume is not None:
        start_iter = int(resume["iteration"])
        theta = np.asarray(resume["theta"], dtype=float).copy()
        S = np.asarray(resume["stat"], dtype=float).copy()
        gamma_state = resume["gamma_state"]
        small_steps = int(resume.get("small_steps", 0))
        trace = resume["trace"]
        if isinstance(sampler, ChainSampler) and resume.get("mcmc") is not None:
            sampler.state = resume["mcmc"]

    def _snapshot(n_next: int) -> dict:
        # chain state and trace keep mutating after this point; copy them
        trace_copy = RunTrace(
            theta=list(trace.theta),
            f_value=list(trace.f_value),
            support_size=list(trace.support_size),
            stat_error=list(trace.stat_error),
            gamma=list(trace.gamma),
            delta=list(trace.delta),
            m=list(trace.m),
            accept_rate=list(trace.accept_rate),
            wall_time=list(trace.wall_time),
            meta={k: v for k, v in trace.meta.items() if k != "checkpoint"},
        )
        return {
            "iteration": n_next,
            "theta": theta.copy(),
            "stat": np.asarray(S, dtype=float).copy(),
            "gamma_state": gamma_state,
            "small_steps": small_steps,
            "trace": trace_copy,
            "mcmc": copy.deepcopy(sampler.state)
            if isinstance(sampler, ChainSampler)
            else None,
        }

    bound = getattr(model, "THETA_BOUND", None) or 1e4
    for n in range(start_iter, config.max_iter):
        t0 = time.perf_counter()
        gamma_n = gamma_at(sched, n)
        delta_n = delta_at(sched, n)
        m_n = batch_at(sched, n)

        draws = stats = None
        if algo in EXACT_STAT_ALGOS:
            S_next = model.exact_mean_stat(theta)
        else:
            draws, stats = sampler.draw_batch(theta, m_n, n)
            if algo in SA_ALGOS:
                S_next = stat_update_sa(S, stats, delta_n)
            else:
                S_next = stat_update_mc(stats)

        err = None
        if config.track_stat_error and algo not in EXACT_STAT_ALGOS:
            sbar = model.exact_mean_stat(theta)
            if sbar is not None:
                err = float(np.linalg.norm(S_next - sbar))

        if algo in GRADIENT_ALGOS:
            if sched.adaptive:
                contrib = model.hessian_diag_contribution(theta, draws, stats=stats)
                if contrib is None:
                    raise ValueError(
                        "adaptive step sizes need hessian_diag_contribution"
                    )
                gamma_state, step = adaptive_gamma_update(
                    gamma_state, contrib, delta_n, sched
                )
            else:
                step = gamma_n
            theta_new = pg_step(model, pen, theta, step, S_next)
        else:
            theta_new = mstep_exact(model, pen, S_next, theta)

        if float(np.linalg.norm(theta_new)) >= bound:
            trace.meta["projections"] += 1
        theta_new = model.project_domain(theta_new)

        trace.gamma.append(gamma_n)
        trace.delta.append(delta_n)
        trace.m.append(m_n)
        trace.stat_error.append(err)
        trace.accept_rate.append(
            sampler.rw_acceptance_rate() if sampler is not None else None
        )
        trace.wall_time.append(time.perf_counter() - t0)
        trace.theta.append(theta_new.copy())
        trace.f_value.append(
            _f_value(model, pen, theta_new) if config.track_f else None
        )
        trace.support_size.append(int(support_set(theta_new, mask).size))

        theta = theta_new
        S = S_next

        if config.early_stop_tol > 0.0:
            move = float(np.linalg.norm(theta_new - trace.theta[-2])) / gamma_n
            small_steps = small_steps + 1 if move < config.early_stop_tol else 0
            if small_steps >= EARLY_STOP_RUN:
                trace.meta["stopped_early_at"] = n + 1
                break

        if (
            checkpoint_cb is not None
            and config.checkpoint_every > 0
            and (n + 1) % config.checkpoint_every == 0
        ):
            checkpoint_cb(_snapshot(n + 1))

    if sampler is not None and isinstance(sampler, ChainSampler):
        trace.meta["n_bad_proposals"] = int(sampler.state.n_bad)
    trace.meta["checkpoint"] = _snapshot(len(trace.gamma))
    return trace
