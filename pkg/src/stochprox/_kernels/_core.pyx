# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``pure.py``.

Semantics must match the NumPy backend: identical inputs, identical
random-number consumption, identical update rules.  Only the speed
differs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, fmax, fmin, isfinite, log, sqrt

cnp.import_array()

BACKEND = "compiled"

DEF DEGENERATE_GAP = 1e-8


cdef inline int _conc_row(
    double lvc, double lvp, double lq, double lcl, double lka,
    const double[:] times, double dose, double[:] out, Py_ssize_t nj,
) noexcept nogil:
    """Fill one row of concentrations; returns 1 when degenerate."""
    cdef double vc = exp(lvc)
    cdef double vp = exp(lvp)
    cdef double q = exp(lq)
    cdef double cl = exp(lcl)
    cdef double ka = exp(lka)
    cdef double k10 = cl / vc
    cdef double k12 = q / vc
    cdef double k21 = q / vp
    cdef double s = k10 + k12 + k21
    cdef double disc2 = s * s - 4.0 * k10 * k21
    cdef double disc = sqrt(disc2) if disc2 > 0.0 else 0.0
    cdef double l1 = 0.5 * (s + disc)
    cdef double l2 = 0.5 * (s - disc)
    cdef double scale = fmax(fmax(l1, fabs(l2)), ka)
    cdef double gap = fmin(fmin(fabs(l1 - l2), fabs(ka - l1)), fabs(ka - l2))
    cdef Py_ssize_t j
    if not (gap > DEGENERATE_GAP * scale) or not isfinite(scale):
        for j in range(nj):
            out[j] = 0.0
        return 1
    cdef double c1 = (k21 - l1) / ((ka - l1) * (l2 - l1))
    cdef double c2 = (k21 - l2) / ((ka - l2) * (l1 - l2))
    cdef double c3 = (k21 - ka) / ((l1 - ka) * (l2 - ka))
    cdef double amp = dose * ka / vc
    cdef double v
    for j in range(nj):
        v = amp * (
            c1 * exp(-l1 * times[j])
            + c2 * exp(-l2 * times[j])
            + c3 * exp(-ka * times[j])
        )
        # amounts are nonnegative; rounding can leave -1e-17 residue at t ~ 0
        out[j] = v if v > 0.0 else 0.0
    return 0


def pk_conc_batch(z, times, double dose):
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    cdef Py_ssize_t m = z.shape[0]
    times = np.asarray(times, dtype=np.float64)
    shared = times.ndim == 1
    if shared:
        times = times[None, :]
    cdef double[:, :] zv = z
    cdef double[:, :] tv = np.ascontiguousarray(times)
    cdef Py_ssize_t nj = tv.shape[1]
    conc = np.empty((m, nj), dtype=np.float64)
    degen = np.zeros(m, dtype=bool)
    cdef double[:, :] cv = conc
    cdef cnp.uint8_t[:] dv = degen.view(np.uint8)
    cdef Py_ssize_t i, trow
    for i in range(m):
        trow = 0 if shared else i
        if _conc_row(
            zv[i, 0], zv[i, 1], zv[i, 2], zv[i, 3], zv[i, 4],
            tv[trow], dose, cv[i], nj,
        ):
            dv[i] = 1
            for trow in range(nj):
                cv[i, trow] = np.nan
    return conc, degen


def pk_mh_sweep(
    double[:, :] z,
    double[:, :] rw_sd,
    double[:, :] prior_mean,
    double[:] sigma_diag,
    double[:, :] Y,
    double[:, :] times,
    double dose,
    double sigma_res,
    double[:, :] eps_indep,
    double[:] u_indep,
    double[:, :] eps_rw,
    double[:, :] u_rw,
    double[:, :] cur_pred,
    double[:] cur_sse,
    cnp.int64_t[:] accepts_indep,
    cnp.int64_t[:, :] accepts_rw,
):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t r = z.shape[1]
    cdef Py_ssize_t nj = Y.shape[1]
    cdef double inv_two_sig2 = 0.5 / (sigma_res * sigma_res)
    cdef int n_bad = 0
    cdef Py_ssize_t k, j, t
    cdef double sse, d, log_ratio, d_prior, old, prop
    prop_buf = np.empty(nj, dtype=np.float64)
    zp_buf = np.empty(r, dtype=np.float64)
    cdef double[:] pred = prop_buf
    cdef double[:] zp = zp_buf
    cdef int bad

    with nogil:
        for k in range(n):
            # independence step: Sigma z' ~ N(prior_mean_k, I)
            for j in range(r):
                zp[j] = (prior_mean[k, j] + eps_indep[k, j]) / sigma_diag[j]
            bad = _conc_row(
                zp[0], zp[1], zp[2], zp[3], zp[4], times[k], dose, pred, nj
            )
            sse = 0.0
            for t in range(nj):
                d = Y[k, t] - pred[t]
                sse += d * d
            log_ratio = -(sse - cur_sse[k]) * inv_two_sig2
            if bad or not isfinite(log_ratio):
                n_bad += 1
            elif log(u_indep[k]) < log_ratio:
                for j in range(r):
                    z[k, j] = zp[j]
                for t in range(nj):
                    cur_pred[k, t] = pred[t]
                cur_sse[k] = sse
                accepts_indep[k] += 1

            # componentwise random walks
            for j in range(r):
                old = z[k, j]
                prop = old + rw_sd[k, j] * eps_rw[k, j]
                z[k, j] = prop
                bad = _conc_row(
                    z[k, 0], z[k, 1], z[k, 2], z[k, 3], z[k, 4],
                    times[k], dose, pred, nj,
                )
                z[k, j] = old
                sse = 0.0
                for t in range(nj):
                    d = Y[k, t] - pred[t]
                    sse += d * d
                d_prior = -0.5 * (
                    (sigma_diag[j] * prop - prior_mean[k, j]) ** 2
                    - (sigma_diag[j] * old - prior_mean[k, j]) ** 2
                )
                log_ratio = -(sse - cur_sse[k]) * inv_two_sig2 + d_prior
                if bad or not isfinite(log_ratio):
                    n_bad += 1
                elif log(u_rw[k, j]) < log_ratio:
                    z[k, j] = prop
                    for t in range(nj):
                        cur_pred[k, t] = pred[t]
                    cur_sse[k] = sse
                    accepts_rw[k, j] += 1
    return n_bad


def quad_cd_core(
    double[:, :] A,
    double[:] b,
    theta0,
    double[:] thr,
    double[:] den_add,
    double[:] lo,
    double[:] hi,
    bint use_box,
    double tol,
    long max_cycles,
):
    theta_arr = np.asarray(theta0, dtype=np.float64).copy()
    cdef double[:] theta = theta_arr
    cdef Py_ssize_t d = theta.shape[0]
    q_arr = np.asarray(A) @ theta_arr
    cdef double[:] q = q_arr
    cdef double max_change = 0.0
    cdef long cycles = 0
    cdef Py_ssize_t i, j
    cdef double aii, resid, new, mag, diff
    cdef int unbounded = -1

    with nogil:
        while cycles < max_cycles:
            max_change = 0.0
            for i in range(d):
                aii = A[i, i]
                resid = b[i] - q[i] + aii * theta[i]
                if aii <= 0.0:
                    if fabs(resid) <= thr[i]:
                        new = 0.0
                    else:
                        unbounded = <int> i
                        break
                elif use_box:
                    new = fmin(fmax(resid / aii, lo[i]), hi[i])
                else:
                    mag = fabs(resid) - thr[i]
                    if mag <= 0.0:
                        new = 0.0
                    else:
                        new = (mag if resid > 0.0 else -mag) / (aii + den_add[i])
                diff = new - theta[i]
                if diff != 0.0:
                    theta[i] = new
                    for j in range(d):
                        q[j] += A[j, i] * diff
                    if fabs(diff) > max_change:
                        max_change = fabs(diff)
            if unbounded >= 0:
                break
            cycles += 1
            if max_change < tol:
                break

    if unbounded >= 0:
        raise FloatingPointError(
            f"coordinate {unbounded} has nonpositive curvature and "
            "nonzero gradient; surrogate unbounded"
        )
    if cycles >= max_cycles and not max_change < tol:
        raise RuntimeError(
            f"coordinate descent did not converge in {max_cycles} cycles "
            f"(last max change {max_change:.3e})"
        )
    return theta_arr, cycles, max_change
