"""Step-size, averaging-weight and batch-size schedules.

Sequences follow the piecewise-constant-then-polynomial form

    gamma_{n+1} = gamma_star             if n <= n_alpha,
                  gamma_star (n-n_alpha)^(-alpha)  otherwise,

and analogously for delta with (delta_star, beta, n_beta).  Batch sizes
grow as m_star * n^c, rounded up to stay integer.  The module also
provides the tail sum D_n governing schedule admissibility, an exact
algebraic identity check on the delta sequence, and the adaptive
diagonal step-size state driven by a running Hessian estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

# clamp range for the adaptive Hessian diagonal
H_MIN = 1e-6
H_MAX = 1e6


@dataclass(frozen=True)
class ScheduleSpec:
    gamma_star: float = 0.004
    alpha: float = 0.75
    n_alpha: int = 0
    delta_star: float = 0.5
    beta: float = 0.5
    n_beta: int = 0
    m_star: int = 1
    c: float = 0.0
    adaptive: bool = False
    n0: int = 0

    def __post_init__(self):
        if self.gamma_star <= 0:
            raise ValueError("gamma_star must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if not (0.0 < self.delta_star <= 1.0):
            raise ValueError("delta_star must lie in (0, 1]")
        if self.m_star < 1:
            raise ValueError("m_star must be a positive integer")
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.n_alpha < 0 or self.n_beta < 0 or self.n0 < 0:
            raise ValueError("warmup lengths must be nonnegative")


def gamma_at(spec: ScheduleSpec, n: int) -> float:
    """Step size used at iteration n (0-based), i.e. gamma_{n+1}."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n <= spec.n_alpha or spec.alpha == 0.0:
        return spec.gamma_star
    return spec.gamma_star * (n - spec.n_alpha) ** (-spec.alpha)


def delta_at(spec: ScheduleSpec, n: int) -> float:
    """Averaging weight used at iteration n (0-based), i.e. delta_{n+1}."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n <= spec.n_beta or spec.beta == 0.0:
        return spec.delta_star
    return spec.delta_star * (n - spec.n_beta) ** (-spec.beta)


def batch_at(spec: ScheduleSpec, n: int) -> int:
    """Monte Carlo batch size used at iteration n (0-based), i.e. m_{n+1}."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if spec.c == 0.0:
        return spec.m_star
    return int(math.ceil(spec.m_star * (n + 1) ** spec.c))


def _delta_seq(spec: ScheduleSpec, j) -> float:
    # delta_j in 1-based sequence indexing: delta_j = delta_at(j - 1)
    return delta_at(spec, j - 1)


def compute_D(
    spec: ScheduleSpec, n: int, horizon: int, tol: float = 1e-10
) -> tuple[float, float]:
    """Tail sum D_n = 1 + sum_{k>=n} prod_{j=n..k} (1 - delta_j).

    The leading 1 is the empty product, so a constant delta_star gives
    exactly 1/delta_star.  Returns (value, certified tail bound); the sum
    is truncated at ``horizon`` and the remainder is bounded using the
    fact that the delta sequence is non-increasing (geometric comparison
    on dyadic blocks).  Raises if the bound cannot be pushed below
    ``tol``, reporting a horizon that would suffice.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if horizon < n:
        raise ValueError("horizon must be >= n")

    total = 1.0
    prod = 1.0
    for k in range(n, horizon + 1):
        prod *= 1.0 - _delta_seq(spec, k)
        total += prod
        if prod == 0.0:
            return total, 0.0

    # certified remainder: on each block (lo, 2*lo] the smallest delta is
    # attained at the right edge, so the block sum is geometrically bounded
    bound = 0.0
    prefac = prod
    lo = horizon
    for _ in range(400):
        hi = 2 * lo
        dmin = _delta_seq(spec, hi)
        if dmin >= 1.0:
            break
        if dmin <= 0.0:
            bound = math.inf
            break
        block = prefac * (1.0 - dmin) / dmin
        bound += block
        prefac *= (1.0 - dmin) ** (hi - lo)
        lo = hi
        if block < tol * 1e-6 or prefac == 0.0:
            break

    if not bound < tol:
        needed = _suggest_horizon(spec, n, tol)
        raise ValueError(
            f"horizon {horizon} too small to certify tail < {tol:g}; "
            f"try horizon >= {needed}"
        )
    return total, bound


def _suggest_horizon(spec: ScheduleSpec, n: int, tol: float) -> int:
    log_prod = 0.0
    k = n
    while k < 10**9:
        d = _delta_seq(spec, k)
        if d >= 1.0:
            return k
        log_prod += math.log1p(-d)
        if log_prod - math.log(d) < math.log(tol) - 3.0:
            return 2 * k
        k = max(k + 1, int(k * 1.25))
    return 10**9


def delta_identity_check(spec: ScheduleSpec, n: int) -> float:
    """Residual of the exact identity sum_{j=2..n} D(j+1:n) delta_j = 1 - D(2:n).

    D(k:n) denotes prod_{j=k..n} (1 - delta_j), with the empty product
    equal to 1.  Holds algebraically for any delta sequence; the returned
    residual only measures floating-point error.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    deltas = np.array([_delta_seq(spec, j) for j in range(2, n + 1)])
    one_minus = 1.0 - deltas
    # suffix[i] = prod_{j>i} (1 - delta_j), i.e. Delta_{j+1:n}
    suffix = np.ones_like(deltas)
    acc = 1.0
    for i in range(deltas.shape[0] - 1, -1, -1):
        suffix[i] = acc
        acc *= one_minus[i]
    lhs = float(np.sum(suffix * deltas))
    rhs = 1.0 - float(np.prod(one_minus))
    return abs(lhs - rhs)


@dataclass(frozen=True)
class H5Report:
    checks: dict
    flattening: dict
    passed: bool
    notes: tuple = ()


def validate_H5(spec: ScheduleSpec, n_terms: int = 2000) -> H5Report:
    """Check admissibility of a polynomial schedule.

    Analytic checks (these decide ``passed``):
      * sum gamma_n diverges        <=>  alpha <= 1
      * sum gamma_n^2 converges     <=>  alpha > 1/2 (or 2*alpha + c > 1
        with a growing batch)
      * beta < alpha for a constant batch
      * beta < 1 strictly (beta = 1 makes D_n infinite)

    Numeric part: partial sums of the admissibility series are computed
    over ``n_terms`` terms with D_n approximated by 1/delta_n, and the
    fraction contributed by the last half is reported.  These ratios are
    diagnostics only and do not enter ``passed``.
    """
    if spec.adaptive:
        raise ValueError("validate_H5 applies to polynomial schedules only")
    notes = []
    checks = {
        "sum_gamma_diverges": spec.alpha <= 1.0,
        "sum_gamma_sq_converges": (
            spec.alpha > 0.5 if spec.c == 0.0 else 2.0 * spec.alpha + spec.c > 1.0
        ),
        "beta_lt_one": spec.beta < 1.0,
    }
    if spec.c == 0.0:
        checks["beta_lt_alpha"] = spec.beta < spec.alpha
    if spec.beta >= 1.0:
        notes.append("beta >= 1 makes D_n infinite")
    # the stronger sufficient pairing (1+beta)/2 < alpha is reported but not
    # required: schedules at the boundary are used in practice
    notes.append(
        "strict sufficient pairing (1+beta)/2 < alpha: "
        + ("holds" if (1.0 + spec.beta) / 2.0 < spec.alpha else "does not hold")
    )

    ns = np.arange(1, n_terms + 1)
    gam = np.array([gamma_at(spec, int(i) - 1) for i in ns])
    dlt = np.array([delta_at(spec, int(i) - 1) for i in ns])
    m = np.array([batch_at(spec, int(i) - 1) for i in ns], dtype=float)
    d_hat = 1.0 / dlt
    series = {
        "gamma_sq": gam**2,
        "gamma_var_times_D": (
            np.concatenate(([0.0], gam[:-1] * gam[1:]))
            + np.concatenate(([0.0], gam[:-1] ** 2))
            + np.abs(np.concatenate(([0.0], np.diff(gam))))
        )
        * d_hat,
        "gamma_sq_delta_sq_D_sq_over_m": gam**2 * dlt**2 * (1.0 + d_hat) ** 2 / m,
    }
    flattening = {}
    for name, terms in series.items():
        total = float(np.sum(terms))
        half = float(np.sum(terms[n_terms // 2 :]))
        flattening[name] = half / total if total > 0 else 0.0

    return H5Report(
        checks=checks,
        flattening=flattening,
        passed=all(checks.values()),
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class AdaptiveGammaState:
    """Running estimate of the negative log-likelihood Hessian diagonal."""

    hessian_diag: Optional[np.ndarray] = None
    iteration: int = 0


def gamma_from_hessian(h: np.ndarray, n: int, spec: ScheduleSpec) -> np.ndarray:
    """Diagonal step sizes from a Hessian diagonal estimate at iteration n."""
    h = np.asarray(h, dtype=float)
    if n <= spec.n0:
        return 1.0 / h
    return 1.0 / ((n - spec.n0) ** spec.alpha * h)


def adaptive_gamma_update(
    state: AdaptiveGammaState,
    hessian_contribution: np.ndarray,
    delta: float,
    spec: ScheduleSpec,
) -> tuple[AdaptiveGammaState, np.ndarray]:
    """One stochastic-approximation update of the Hessian diagonal.

    Returns the new state and the diagonal step sizes to use for the
    iteration that produced ``hessian_contribution`` (iteration index =
    previous state.iteration).  Entries are clamped to [H_MIN, H_MAX], so
    steps never exceed 1/H_MIN.
    """
    contrib = np.asarray(hessian_contribution, dtype=float)
    if state.hessian_diag is None:
        h_raw = contrib.copy()
    else:
        h_raw = (1.0 - delta) * state.hessian_diag + delta * contrib
    if np.all(h_raw == 0.0):
        warnings.warn("adaptive Hessian estimate is identically zero; clamping")
    h = np.clip(h_raw, H_MIN, H_MAX)
    n = state.iteration
    new_state = AdaptiveGammaState(hessian_diag=h, iteration=n + 1)
    return new_state, gamma_from_hessian(h, n, spec)
