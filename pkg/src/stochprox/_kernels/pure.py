"""NumPy implementations of the hot kernels.

These are the reference semantics for the compiled backend in
``_core.pyx``: same inputs, same random-number consumption order, same
update rules.  The compiled twin exists purely for speed.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

# relative eigenvalue gap below which the closed-form solution is
# considered degenerate (caller decides how to recover)
DEGENERATE_GAP = 1e-8


def pk_conc_batch(z: np.ndarray, times: np.ndarray, dose: float):
    """Central-compartment concentration for a batch of latent vectors.

    ``z`` has rows (log Vc, log Vp, log Q, log Cl, log ka); ``times`` is
    either one row shared by the batch or one row per batch entry.
    Returns (conc (M, J), degenerate (M,)); rows flagged degenerate have
    nearly coincident rates and must be recomputed by the caller.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    m = z.shape[0]
    times = np.asarray(times, dtype=float)
    if times.ndim == 1:
        times = np.broadcast_to(times, (m, times.shape[0]))
    vc = np.exp(z[:, 0])
    vp = np.exp(z[:, 1])
    q = np.exp(z[:, 2])
    cl = np.exp(z[:, 3])
    ka = np.exp(z[:, 4])
    k10 = cl / vc
    k12 = q / vc
    k21 = q / vp
    s = k10 + k12 + k21
    disc = np.sqrt(np.maximum(s * s - 4.0 * k10 * k21, 0.0))
    l1 = 0.5 * (s + disc)
    l2 = 0.5 * (s - disc)
    scale = np.maximum(np.maximum(l1, np.abs(l2)), ka)
    gap = np.minimum(
        np.minimum(np.abs(l1 - l2), np.abs(ka - l1)), np.abs(ka - l2)
    )
    degenerate = ~(gap > DEGENERATE_GAP * scale) | ~np.isfinite(scale)
    safe = np.where(degenerate, np.nan, 1.0)
    c1 = (k21 - l1) / ((ka - l1) * (l2 - l1))
    c2 = (k21 - l2) / ((ka - l2) * (l1 - l2))
    c3 = (k21 - ka) / ((l1 - ka) * (l2 - ka))
    amp = dose * ka / vc * safe
    conc = amp[:, None] * (
        c1[:, None] * np.exp(-l1[:, None] * times)
        + c2[:, None] * np.exp(-l2[:, None] * times)
        + c3[:, None] * np.exp(-ka[:, None] * times)
    )
    # amounts are nonnegative; rounding can leave -1e-17 residue at t ~ 0
    return np.maximum(conc, 0.0), degenerate


def pk_mh_sweep(
    z: np.ndarray,
    rw_sd: np.ndarray,
    prior_mean: np.ndarray,
    sigma_diag: np.ndarray,
    Y: np.ndarray,
    times: np.ndarray,
    dose: float,
    sigma_res: float,
    eps_indep: np.ndarray,
    u_indep: np.ndarray,
    eps_rw: np.ndarray,
    u_rw: np.ndarray,
    cur_pred: np.ndarray,
    cur_sse: np.ndarray,
    accepts_indep: np.ndarray,
    accepts_rw: np.ndarray,
) -> int:
    """One full Metropolis-Hastings sweep over all subjects, in place.

    A sweep is one independence step (proposal = latent prior, so the
    acceptance ratio reduces to the observation likelihood ratio)
    followed by one scalar random-walk step per latent coordinate, using
    the full unnormalized conditional density.  ``z``, ``cur_pred``,
    ``cur_sse`` and the acceptance counters are updated in place; the
    pre-generated noise arrays fix the randomness.  Returns the number
    of proposals rejected for non-finite or degenerate likelihoods.
    """
    n, r = z.shape
    inv_two_sig2 = 0.5 / (sigma_res * sigma_res)
    n_bad = 0

    # independence step: propose z with Sigma z ~ N(prior_mean, I)
    z_prop = (prior_mean + eps_indep) / sigma_diag[None, :]
    pred, degen = pk_conc_batch(z_prop, times, dose)
    sse = np.sum((Y - pred) ** 2, axis=1)
    log_ratio = -(sse - cur_sse) * inv_two_sig2
    ok = np.isfinite(log_ratio) & ~degen
    n_bad += int(np.sum(~ok))
    accept = ok & (np.log(u_indep) < log_ratio)
    z[accept] = z_prop[accept]
    cur_pred[accept] = pred[accept]
    cur_sse[accept] = sse[accept]
    accepts_indep += accept

    # componentwise random walks on the full conditional
    for j in range(r):
        z_prop = z.copy()
        z_prop[:, j] = z[:, j] + rw_sd[:, j] * eps_rw[:, j]
        pred, degen = pk_conc_batch(z_prop, times, dose)
        sse = np.sum((Y - pred) ** 2, axis=1)
        d_prior = -0.5 * (
            (sigma_diag[j] * z_prop[:, j] - prior_mean[:, j]) ** 2
            - (sigma_diag[j] * z[:, j] - prior_mean[:, j]) ** 2
        )
        log_ratio = -(sse - cur_sse) * inv_two_sig2 + d_prior
        ok = np.isfinite(log_ratio) & ~degen
        n_bad += int(np.sum(~ok))
        accept = ok & (np.log(u_rw[:, j]) < log_ratio)
        z[accept, j] = z_prop[accept, j]
        cur_pred[accept] = pred[accept]
        cur_sse[accept] = sse[accept]
        accepts_rw[:, j] += accept
    return n_bad


def quad_cd_core(
    A: np.ndarray,
    b: np.ndarray,
    theta: np.ndarray,
    thr: np.ndarray,
    den_add: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    use_box: bool,
    tol: float,
    max_cycles: int,
):
    """Cyclical coordinate ascent on -theta'A theta/2 + theta'b - penalty.

    ``thr`` and ``den_add`` hold the per-coordinate soft-threshold level
    and the ridge addition to the curvature (zero on unpenalized
    coordinates); ``lo``/``hi`` are box bounds used when ``use_box``.
    Returns (theta, cycles_used, last_max_change).
    """
    d = theta.shape[0]
    theta = theta.copy()
    q = A @ theta  # maintained as A @ theta
    max_change = np.inf
    cycles = 0
    while cycles < max_cycles:
        max_change = 0.0
        for i in range(d):
            aii = A[i, i]
            resid = b[i] - q[i] + aii * theta[i]
            if aii <= 0.0:
                if abs(resid) <= thr[i]:
                    new = 0.0
                else:
                    raise FloatingPointError(
                        f"coordinate {i} has nonpositive curvature and "
                        "nonzero gradient; surrogate unbounded"
                    )
            elif use_box:
                new = min(max(resid / aii, lo[i]), hi[i])
            else:
                mag = abs(resid) - thr[i]
                if mag <= 0.0:
                    new = 0.0
                else:
                    new = np.sign(resid) * mag / (aii + den_add[i])
            diff = new - theta[i]
            if diff != 0.0:
                theta[i] = new
                q += A[:, i] * diff
                max_change = max(max_change, abs(diff))
        cycles += 1
        if max_change < tol:
            return theta, cycles, max_change
    raise RuntimeError(
        f"coordinate descent did not converge in {max_cycles} cycles "
        f"(last max change {max_change:.3e})"
    )
