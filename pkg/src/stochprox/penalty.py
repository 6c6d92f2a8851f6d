"""Penalty functions and their proximal operators.

Supported penalties: none, lasso, elastic-net and box-projection
(the characteristic function of a hyper-rectangle).  A boolean mask
selects which coordinates are penalized; masked-out coordinates
(typically intercepts) pass through every operator untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

KINDS = ("none", "lasso", "elastic-net", "box-projection")


class PenaltyValue(NamedTuple):
    """g(theta) with an explicit infinity flag.

    Box-projection violations are reported through ``finite=False`` rather
    than an IEEE inf so that serialized traces never carry non-finite
    floats.
    """

    value: float
    finite: bool = True

    def __float__(self) -> float:
        return self.value if self.finite else float("inf")


@dataclass(frozen=True)
class PenaltySpec:
    """Specification of the non-smooth term g.

    ``lam`` is the regularization weight, ``alpha`` the elastic-net mixing
    (1.0 = pure lasso).  ``mask`` marks penalized coordinates; ``None``
    means all coordinates are penalized.  ``box`` holds per-coordinate
    (lo, hi) bounds and is only used by kind="box-projection".
    """

    kind: str = "none"
    lam: float = 0.0
    alpha: float = 1.0
    mask: Optional[np.ndarray] = None
    box: Optional[np.ndarray] = field(default=None)  # shape (d, 2)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if self.mask is not None:
            object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        if self.box is not None:
            box = np.asarray(self.box, dtype=float)
            if box.ndim != 2 or box.shape[1] != 2:
                raise ValueError("box must have shape (d, 2)")
            object.__setattr__(self, "box", box)

    def mask_for(self, d: int) -> np.ndarray:
        if self.mask is None:
            return np.ones(d, dtype=bool)
        if self.mask.shape[0] != d:
            raise ValueError(
                f"mask length {self.mask.shape[0]} != parameter dimension {d}"
            )
        return self.mask


def _check_theta(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError("non-finite parameter vector")
    return theta


def prox(spec: PenaltySpec, gamma, theta: np.ndarray) -> np.ndarray:
    """Proximal map argmin_tau { g(tau) + ||theta - tau||^2 / (2 gamma) }.

    ``gamma`` may be a positive scalar or a per-coordinate positive vector
    (diagonal step-size matrices); the penalty is separable so the prox
    applies coordinatewise either way.  Coordinates with mask=False are
    returned bit-for-bit unchanged.
    """
    theta = _check_theta(theta)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0.0):
        raise ValueError("gamma must be positive")
    if gamma.ndim not in (0, 1):
        raise ValueError("gamma must be a scalar or a vector")
    if spec.kind == "none" or spec.lam == 0.0 and spec.kind != "box-projection":
        return theta.copy()

    mask = spec.mask_for(theta.shape[0])
    out = theta.copy()
    g = gamma if gamma.ndim == 0 else gamma[mask]

    if spec.kind == "box-projection":
        if spec.box is None:
            raise ValueError("box-projection requires box bounds")
        lo, hi = spec.box[mask, 0], spec.box[mask, 1]
        out[mask] = np.clip(theta[mask], lo, hi)
        return out

    # lasso is elastic-net with alpha = 1
    alpha = spec.alpha if spec.kind == "elastic-net" else 1.0
    thr = g * spec.lam * alpha
    x = theta[mask]
    # dead zone |x| <= thr maps to 0 (closed interval)
    shrunk = np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)
    out[mask] = shrunk / (1.0 + g * spec.lam * (1.0 - alpha))
    return out


def penalty_value(spec: PenaltySpec, theta: np.ndarray) -> PenaltyValue:
    """Evaluate g(theta); box violations return PenaltyValue(0, finite=False)."""
    theta = _check_theta(theta)
    if spec.kind == "none":
        return PenaltyValue(0.0)
    mask = spec.mask_for(theta.shape[0])
    x = theta[mask]
    if spec.kind == "box-projection":
        if spec.box is None:
            raise ValueError("box-projection requires box bounds")
        lo, hi = spec.box[mask, 0], spec.box[mask, 1]
        inside = np.all(x >= lo) and np.all(x <= hi)
        return PenaltyValue(0.0) if inside else PenaltyValue(0.0, finite=False)
    alpha = spec.alpha if spec.kind == "elastic-net" else 1.0
    val = spec.lam * (
        alpha * np.abs(x).sum() + 0.5 * (1.0 - alpha) * np.square(x).sum()
    )
    return PenaltyValue(float(val))


def lambda_max(spec: PenaltySpec, gradient_at_zero: np.ndarray) -> float:
    """Smallest lambda zeroing every penalized coordinate.

    For separable l1-type penalties the KKT stationarity condition at a
    point whose penalized block is zero reads |grad_i| <= lambda * alpha,
    so the threshold is max |grad_i| / alpha over masked coordinates.
    """
    grad = np.asarray(gradient_at_zero, dtype=float)
    mask = spec.mask_for(grad.shape[0])
    if not np.any(mask):
        raise ValueError("lambda_max needs at least one penalized coordinate")
    alpha = spec.alpha if spec.kind == "elastic-net" else 1.0
    return float(np.max(np.abs(grad[mask])) / alpha)
