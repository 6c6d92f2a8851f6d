"""Metropolis-Hastings transition kernel for the latent variables.

One sweep applies, per subject, an independence proposal drawn from the
latent prior (so the acceptance ratio reduces to the observation
likelihood ratio) followed by one scalar random-walk update per latent
coordinate using the full unnormalized conditional density.  Random-walk
scales adapt toward a target acceptance rate with a vanishing gain.

All proposal noise is pre-generated from counter-based streams indexed
by (iteration, draw), so chains are reproducible regardless of how
subjects are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from . import rng as rngmod
from .model_api import Model
from .pk import PkModel, conc_batch_with_fallback

SD_MIN = 1e-6
SD_MAX = 1e3
TARGET_RATE = 0.4
ADAPT_WINDOW = 50
ADAPT_EXPONENT = 0.6


@dataclass
class McmcState:
    """Chain state for all subjects plus the adaptation bookkeeping."""

    z: np.ndarray  # (N, R) current latent configuration
    rw_sd: np.ndarray  # (N, R) random-walk standard deviations
    window_accepts: np.ndarray  # (N, R) acceptances in the open window
    window_sweeps: int = 0
    windows_done: int = 0
    accepts_indep: np.ndarray = None  # type: ignore[assignment]
    accepts_rw: np.ndarray = None  # type: ignore[assignment]
    total_sweeps: int = 0
    n_bad: int = 0
    target_rate: float = TARGET_RATE
    window: int = ADAPT_WINDOW
    frozen: bool = False

    @staticmethod
    def initial(
        z0: np.ndarray,
        rw_sd: float = 0.5,
        target_rate: float = TARGET_RATE,
        window: int = ADAPT_WINDOW,
        frozen: bool = False,
    ) -> "McmcState":
        z0 = np.array(z0, dtype=float)
        n, r = z0.shape
        return McmcState(
            z=z0,
            rw_sd=np.full((n, r), float(rw_sd)),
            window_accepts=np.zeros((n, r), dtype=np.int64),
            accepts_indep=np.zeros(n, dtype=np.int64),
            accepts_rw=np.zeros((n, r), dtype=np.int64),
            target_rate=target_rate,
            window=window,
            frozen=frozen,
        )


def adapt_step(state: McmcState, rates: np.ndarray) -> McmcState:
    """Update random-walk scales from one window's acceptance rates.

    The log-scale moves by gain * (rate - target) with gain decaying in
    the number of completed windows, so adaptation vanishes and the
    chain's asymptotics are untouched.
    """
    state.windows_done += 1
    gain = state.windows_done ** (-ADAPT_EXPONENT)
    new_sd = state.rw_sd * np.exp(gain * (rates - state.target_rate))
    state.rw_sd = np.clip(new_sd, SD_MIN, SD_MAX)
    return state


def _maybe_adapt(state: McmcState) -> None:
    state.window_sweeps += 1
    if state.window_sweeps >= state.window:
        if not state.frozen:
            rates = state.window_accepts / (state.window_sweeps)
            adapt_step(state, rates)
        state.window_accepts[:] = 0
        state.window_sweeps = 0


def sweep_noise(seed: int, iteration: int, draw: int, n: int, r: int):
    """Pre-generated proposal noise for one sweep."""
    gen = rngmod.substream(seed, rngmod.MCMC_SWEEP, iteration, draw)
    eps_indep = gen.standard_normal((n, r))
    u_indep = gen.random(n)
    eps_rw = gen.standard_normal((n, r))
    u_rw = gen.random((n, r))
    return eps_indep, u_indep, eps_rw, u_rw


def sweep_generic(
    model: Model,
    theta: np.ndarray,
    state: McmcState,
    cur_ll: np.ndarray,
    cur_lp: np.ndarray,
    eps_indep: np.ndarray,
    u_indep: np.ndarray,
    eps_rw: np.ndarray,
    u_rw: np.ndarray,
) -> None:
    """One sweep through any model exposing the latent-density hooks.

    ``cur_ll``/``cur_lp`` hold the per-subject observation and prior terms
    at the current state and are updated in place together with the chain.
    """
    n, r = state.z.shape

    z_prop = model.prior_proposal(theta, eps_indep)
    ll_prop = model.latent_loglik(theta, z_prop)
    log_ratio = ll_prop - cur_ll
    ok = np.isfinite(log_ratio)
    state.n_bad += int(np.sum(~ok))
    accept = ok & (np.log(u_indep) < log_ratio)
    if np.any(accept):
        state.z[accept] = z_prop[accept]
        cur_ll[accept] = ll_prop[accept]
        cur_lp[accept] = model.latent_logprior(theta, z_prop)[accept]
    state.accepts_indep += accept

    for j in range(r):
        z_prop = state.z.copy()
        z_prop[:, j] = state.z[:, j] + state.rw_sd[:, j] * eps_rw[:, j]
        ll_prop = model.latent_loglik(theta, z_prop)
        lp_prop = model.latent_logprior(theta, z_prop)
        log_ratio = (ll_prop + lp_prop) - (cur_ll + cur_lp)
        ok = np.isfinite(log_ratio)
        state.n_bad += int(np.sum(~ok))
        accept = ok & (np.log(u_rw[:, j]) < log_ratio)
        if np.any(accept):
            state.z[accept, j] = z_prop[accept, j]
            cur_ll[accept] = ll_prop[accept]
            cur_lp[accept] = lp_prop[accept]
        state.accepts_rw[:, j] += accept
        state.window_accepts[:, j] += accept

    state.total_sweeps += 1
    _maybe_adapt(state)


def mh_sweep(
    model: Model, theta: np.ndarray, state: McmcState, rng: np.random.Generator
) -> tuple[McmcState, np.ndarray]:
    """Single functional-style sweep; returns the state and a draw copy."""
    n, r = state.z.shape
    eps_indep = rng.standard_normal((n, r))
    u_indep = rng.random(n)
    eps_rw = rng.standard_normal((n, r))
    u_rw = rng.random((n, r))
    cur_ll = model.latent_loglik(theta, state.z)
    cur_lp = model.latent_logprior(theta, state.z)
    sweep_generic(
        model, theta, state, cur_ll, cur_lp, eps_indep, u_indep, eps_rw, u_rw
    )
    return state, state.z.copy()


class ChainSampler:
    """Persistent-chain sampler used by the stochastic engines.

    The chain state carries over between engine iterations: the first
    draw of iteration n+1 continues from the last draw of iteration n.
    """

    def __init__(
        self,
        model: Model,
        seed: int,
        z0: np.ndarray,
        rw_sd: float = 0.5,
        target_rate: float = TARGET_RATE,
        window: int = ADAPT_WINDOW,
        frozen: bool = False,
    ):
        self.model = model
        self.seed = seed
        self.state = McmcState.initial(
            z0, rw_sd=rw_sd, target_rate=target_rate, window=window, frozen=frozen
        )
        self._is_pk = isinstance(model, PkModel)

    def draw_batch(
        self, theta: np.ndarray, m: int, iteration: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Advance the chain m sweeps at theta; returns (draws, stats)."""
        if self._is_pk:
            return self._draw_batch_pk(theta, m, iteration)
        return self._draw_batch_generic(theta, m, iteration)

    def rw_acceptance_rate(self) -> float:
        if self.state.total_sweeps == 0:
            return float("nan")
        return float(
            np.mean(self.state.accepts_rw) / self.state.total_sweeps
        )

    def _draw_batch_generic(self, theta, m, iteration):
        model, st = self.model, self.state
        n, r = st.z.shape
        cur_ll = model.latent_loglik(theta, st.z)
        cur_lp = model.latent_logprior(theta, st.z)
        draws = np.empty((m, n, r))
        stats = np.empty((m, model.dim_stat))
        for j in range(m):
            noise = sweep_noise(self.seed, iteration, j, n, r)
            sweep_generic(model, theta, st, cur_ll, cur_lp, *noise)
            draws[j] = st.z
            stats[j] = model.stat(st.z)
        return draws, stats

    def _draw_batch_pk(self, theta, m, iteration):
        model, st = self.model, self.state
        n, r = st.z.shape
        ds = model.dataset
        _, sig, sigma_res = model.split(theta)
        prior_mean = model.prior_mean(theta)
        # refresh cached predictions: theta changed since the last batch
        cur_pred = conc_batch_with_fallback(st.z, ds.times, ds.dose)
        cur_sse = np.sum((ds.Y - cur_pred) ** 2, axis=1)
        draws = np.empty((m, n, r))
        stats = np.empty((m, model.dim_stat))
        sig = np.ascontiguousarray(sig)
        for j in range(m):
            eps_indep, u_indep, eps_rw, u_rw = sweep_noise(
                self.seed, iteration, j, n, r
            )
            before = st.accepts_rw.copy()
            st.n_bad += _kernels.pk_mh_sweep(
                st.z, st.rw_sd, prior_mean, sig, ds.Y, ds.times,
                ds.dose, float(sigma_res),
                eps_indep, u_indep, eps_rw, u_rw,
                cur_pred, cur_sse, st.accepts_indep, st.accepts_rw,
            )
            st.window_accepts += st.accepts_rw - before
            draws[j] = st.z
            stats[j] = model.stat_from_sse(st.z, float(np.sum(cur_sse)))
            st.total_sweeps += 1
            _maybe_adapt(st)
        return draws, stats
