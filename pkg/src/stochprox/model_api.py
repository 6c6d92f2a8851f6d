"""Abstract contract between models and the optimization engines.

A model supplies the smooth part phi, the statistic-to-gradient map Psi,
the sufficient statistic S over latent states, and a way to sample the
conditional law of the latent variables.  Exact oracles (closed-form
mean statistic, log-likelihood, Lipschitz constant) are optional
capabilities; engines probe for them and degrade gracefully.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class StatBlock:
    name: str
    start: int
    stop: int

    @property
    def sl(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True)
class StatLayout:
    """Block layout of the sufficient statistic vector.

    Per-subject blocks come first so samplers can update one subject's
    contribution without touching the rest.
    """

    blocks: tuple

    @property
    def dim(self) -> int:
        return self.blocks[-1].stop if self.blocks else 0

    def block(self, name: str) -> StatBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    @staticmethod
    def build(names_and_sizes: Sequence[tuple]) -> "StatLayout":
        blocks = []
        ofs = 0
        for name, size in names_and_sizes:
            blocks.append(StatBlock(name, ofs, ofs + size))
            ofs += size
        return StatLayout(blocks=tuple(blocks))


class Model(abc.ABC):
    """Capabilities every model must provide to run the engines.

    Implementations are immutable after construction and callable from
    multiple threads; all sampler state lives outside the model.
    """

    dim_theta: int
    dim_stat: int
    stat_layout: StatLayout

    @abc.abstractmethod
    def phi(self, theta: np.ndarray) -> float: ...

    @abc.abstractmethod
    def grad_phi(self, theta: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def psi(self, theta: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def Psi(self, theta: np.ndarray) -> np.ndarray:
        """Transposed Jacobian of psi at theta, shape (dim_theta, dim_stat)."""

    def apply_Psi(self, theta: np.ndarray, stat: np.ndarray) -> np.ndarray:
        """Psi(theta) @ stat; override when a dense Psi would be wasteful."""
        return self.Psi(theta) @ np.asarray(stat, dtype=float)

    @abc.abstractmethod
    def stat(self, z: np.ndarray) -> np.ndarray:
        """Sufficient statistic S at a full latent configuration z."""

    # ---- latent-variable sampling -------------------------------------
    @abc.abstractmethod
    def init_latent(self, theta: np.ndarray) -> np.ndarray:
        """Deterministic starting latent configuration (prior means)."""

    def exact_draws(
        self, theta: np.ndarray, n_draws: int, rng: np.random.Generator
    ) -> Optional[np.ndarray]:
        """i.i.d. draws from the exact conditional law, or None if absent."""
        return None

    # hooks used by the generic Metropolis-Hastings sweep
    def latent_loglik(self, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Per-subject observation log-likelihood terms (up to constants)."""
        raise NotImplementedError

    def latent_logprior(self, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Per-subject latent log-prior terms (up to constants)."""
        raise NotImplementedError

    def prior_proposal(self, theta: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """Map standard normal noise to a draw from the latent prior."""
        raise NotImplementedError

    # ---- optional exact oracles ---------------------------------------
    def exact_mean_stat(self, theta: np.ndarray) -> Optional[np.ndarray]:
        return None

    def exact_loglik(self, theta: np.ndarray) -> Optional[float]:
        return None

    def lipschitz_L(self) -> Optional[float]:
        return None

    # ---- optional engine hooks ----------------------------------------
    def hessian_diag_contribution(
        self, theta: np.ndarray, draws: np.ndarray
    ) -> Optional[np.ndarray]:
        """Estimate of diag(-hessian of the log-likelihood) from one batch."""
        return None

    def project_domain(self, theta: np.ndarray) -> np.ndarray:
        """Clamp theta back into the admissible set (identity by default)."""
        return theta

    def default_mask(self) -> np.ndarray:
        """Default penalization mask (True = penalized)."""
        return np.ones(self.dim_theta, dtype=bool)

    def surrogate_argmax(self, stat, penalty, theta0):
        """Exact maximizer of phi + <stat, psi> - g, when available."""
        raise NotImplementedError(
            f"{type(self).__name__} has no exact penalized M-step"
        )


def gradient_surrogate(
    model: Model, theta: np.ndarray, stat_estimate: np.ndarray
) -> np.ndarray:
    """grad phi(theta) + Psi(theta) @ stat_estimate.

    Equals the exact score when stat_estimate is the conditional mean
    statistic at theta.
    """
    theta = np.asarray(theta, dtype=float)
    stat = np.asarray(stat_estimate, dtype=float)
    if theta.shape[0] != model.dim_theta or stat.shape[0] != model.dim_stat:
        raise ValueError(
            f"dimension mismatch: theta {theta.shape[0]} (want {model.dim_theta}), "
            f"stat {stat.shape[0]} (want {model.dim_stat})"
        )
    return model.grad_phi(theta) + model.apply_Psi(theta, stat)
