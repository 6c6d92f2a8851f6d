"""Shared numerical solvers built on the kernel backends."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .penalty import PenaltySpec

CD_TOL = 1e-8
CD_MAX_CYCLES = 10_000


def quad_cd(
    A: np.ndarray,
    b: np.ndarray,
    theta0: np.ndarray,
    penalty: PenaltySpec,
    mask: np.ndarray,
    tol: float = CD_TOL,
    max_cycles: int = CD_MAX_CYCLES,
) -> np.ndarray:
    """Maximize -theta'A theta/2 + theta'b - g(theta) by coordinate descent.

    ``mask`` marks the coordinates of this block that the penalty applies
    to.  Iterates until the largest coordinate change in a full cycle
    drops below ``tol``; raises after ``max_cycles``.
    """
    A = np.ascontiguousarray(A, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    d = b.shape[0]
    mask = np.asarray(mask, dtype=bool)

    thr = np.zeros(d)
    den_add = np.zeros(d)
    lo = np.full(d, -np.inf)
    hi = np.full(d, np.inf)
    use_box = penalty.kind == "box-projection"
    if penalty.kind in ("lasso", "elastic-net"):
        alpha = penalty.alpha if penalty.kind == "elastic-net" else 1.0
        thr[mask] = penalty.lam * alpha
        den_add[mask] = penalty.lam * (1.0 - alpha)
    elif use_box:
        if penalty.box is None:
            raise ValueError("box-projection requires box bounds")
        lo[mask] = penalty.box[mask, 0]
        hi[mask] = penalty.box[mask, 1]

    theta, _, _ = _kernels.quad_cd_core(
        A, b, theta0, thr, den_add, lo, hi, use_box, tol, max_cycles
    )
    return theta


def power_iteration_norm(
    M: np.ndarray, iters: int = 500, tol: float = 1e-12
) -> float:
    """Spectral norm of a symmetric matrix by power iteration."""
    rng = np.random.default_rng(0)
    v = rng.standard_normal(M.shape[0])
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(iters):
        w = M @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(nrm - prev) < tol * max(nrm, 1.0):
            break
        prev = nrm
    return nrm
