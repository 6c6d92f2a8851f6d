"""Linear mixed model with random intercept and slope.

Each subject k contributes J observations Y_kj = <Z_k, (1, t_kj)> + noise
with unit noise variance, and the 2-dimensional latent Z_k is Gaussian
around X_k theta where the design X_k stacks an intercept-and-covariates
row for the intercept component and the same row for the slope component.

Everything is available in closed form here: the conditional law of the
latent variables given the data is a product of bivariate Gaussians, so
the mean statistic, the log-likelihood, its gradient and the gradient's
Lipschitz constant are all exact.  This makes the model the verification
workhorse for the stochastic engines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as rngmod
from .model_api import Model, StatLayout

PAPER_TIMES = np.array([0.25, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0])
THETA_BOUND = 1e4  # radius of the admissible ball

DATA_SCHEMA = "stochprox.lmm-data.v1"
COV_SCHEMA = "stochprox.covariates.v1"


@dataclass(frozen=True)
class LmmDataset:
    times: np.ndarray  # (N, J)
    Y: np.ndarray  # (N, J)
    W: np.ndarray  # (N, D+1) rows (1, x_k1, ..., x_kD)
    theta_star: Optional[np.ndarray]
    seed: Optional[int]

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def J(self) -> int:
        return self.Y.shape[1]

    @property
    def D(self) -> int:
        return self.W.shape[1] - 1

    def design_matrix(self, k: int) -> np.ndarray:
        """Dense 2 x 2(D+1) design for subject k (two-block sparsity)."""
        p = self.W.shape[1]
        X = np.zeros((2, 2 * p))
        X[0, :p] = self.W[k]
        X[1, p:] = self.W[k]
        return X


def ar1_covariates(n: int, d: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Centered Gaussian covariates with covariance rho^|r-r'|."""
    if d == 0:
        return np.zeros((n, 0))
    idx = np.arange(d)
    gamma = rho ** np.abs(idx[:, None] - idx[None, :])
    chol = np.linalg.cholesky(gamma)
    return rng.standard_normal((n, d)) @ chol.T


def default_theta_star(
    D: int, seed: int, n_per_block: int = 6
) -> np.ndarray:
    """Sparse truth: unit intercepts plus a few uniform [0.5, 1.5] effects."""
    p = D + 1
    theta = np.zeros(2 * p)
    theta[0] = 1.0
    theta[p] = 1.0
    gen = rngmod.substream(seed, rngmod.TRUE_PARAMS)
    k = min(n_per_block, D)
    if k > 0:
        first = gen.choice(np.arange(1, p), size=k, replace=False)
        second = gen.choice(np.arange(p + 1, 2 * p), size=k, replace=False)
        theta[first] = gen.uniform(0.5, 1.5, size=k)
        theta[second] = gen.uniform(0.5, 1.5, size=k)
    return theta


def simulate_lmm(
    N: int,
    J: int,
    D: int,
    seed: int,
    theta_star: Optional[np.ndarray] = None,
    times: Optional[np.ndarray] = None,
) -> tuple[LmmDataset, np.ndarray]:
    """Simulate a full dataset; reproducible given the seed."""
    if N < 1 or J < 0 or D < 0:
        raise ValueError("need N >= 1, J >= 0, D >= 0")
    if times is None:
        times = PAPER_TIMES if J == 8 else np.linspace(0.25, 16.0, max(J, 1))
    times = np.asarray(times, dtype=float)[:J]
    tmat = np.tile(times, (N, 1))

    cov = ar1_covariates(N, D, 0.5, rngmod.substream(seed, rngmod.COVARIATES))
    W = np.concatenate([np.ones((N, 1)), cov], axis=1)
    if theta_star is None:
        theta_star = default_theta_star(D, seed)
    theta_star = np.asarray(theta_star, dtype=float)

    p = D + 1
    mean_z = np.stack([W @ theta_star[:p], W @ theta_star[p:]], axis=1)  # (N, 2)
    z = mean_z + rngmod.substream(seed, rngmod.LATENTS).standard_normal((N, 2))
    signal = z[:, 0:1] + z[:, 1:2] * tmat
    Y = signal + rngmod.substream(seed, rngmod.NOISE).standard_normal((N, J))
    ds = LmmDataset(times=tmat, Y=Y, W=W, theta_star=theta_star, seed=seed)
    return ds, theta_star


class LmmModel(Model):
    """Engine-facing wrapper around a dataset, with all exact oracles."""

    def __init__(self, dataset: LmmDataset):
        self.dataset = dataset
        N, J = dataset.N, dataset.J
        p = dataset.W.shape[1]
        self.dim_theta = 2 * p
        self.dim_stat = 1 + self.dim_theta
        self.stat_layout = StatLayout.build(
            [("quad", 1), ("cross", self.dim_theta)]
        )

        tbar = np.stack(
            [np.ones_like(dataset.times), dataset.times], axis=2
        )  # (N, J, 2)
        self.T = np.einsum("kja,kjb->kab", tbar, tbar)  # (N, 2, 2)
        self.Ybar = np.einsum("kj,kja->ka", dataset.Y, tbar)  # (N, 2)
        eye = np.eye(2)
        self.IT = eye[None, :, :] + self.T
        try:
            self.C = np.linalg.inv(self.IT)  # (I + T_k)^{-1}, theta-independent
        except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded
            raise FloatingPointError(f"singular I + T_k: {exc}") from exc
        self.C_chol = np.linalg.cholesky(self.C)

        self.G = dataset.W.T @ dataset.W  # shared block of sum X'X
        # sum_k X_k' C_k X_k has 2x2 block structure weighted by C entries
        self.XtCX = self._xtmx(self.C)
        self.A = self._xtmx(np.tile(eye, (N, 1, 1)))
        self.sum_y_sq = float(np.sum(dataset.Y**2))
        self._hess = -self.A + self.XtCX  # constant hessian of the log-likelihood
        self._L = float(np.linalg.norm(self._hess, 2))

    def _xtmx(self, M: np.ndarray) -> np.ndarray:
        """sum_k X_k' M_k X_k for per-subject 2x2 matrices M_k."""
        W = self.dataset.W
        p = W.shape[1]
        out = np.empty((2 * p, 2 * p))
        for a in range(2):
            for b in range(2):
                out[a * p : (a + 1) * p, b * p : (b + 1) * p] = (
                    W.T * M[:, a, b]
                ) @ W
        return out

    # ---- gradient structure -------------------------------------------
    def phi(self, theta: np.ndarray) -> float:
        return float(-0.5 * theta @ self.A @ theta - 0.5 * self.sum_y_sq)

    def grad_phi(self, theta: np.ndarray) -> np.ndarray:
        return -(self.A @ theta)

    def psi(self, theta: np.ndarray) -> np.ndarray:
        return np.concatenate([[1.0], theta])

    def Psi(self, theta: np.ndarray) -> np.ndarray:
        d = self.dim_theta
        out = np.zeros((d, d + 1))
        out[:, 1:] = np.eye(d)
        return out

    def apply_Psi(self, theta: np.ndarray, stat: np.ndarray) -> np.ndarray:
        return np.asarray(stat, dtype=float)[1:]

    def mean_X_theta(self, theta: np.ndarray) -> np.ndarray:
        """X_k theta for all subjects, shape (N, 2)."""
        p = self.dataset.W.shape[1]
        W = self.dataset.W
        return np.stack([W @ theta[:p], W @ theta[p:]], axis=1)

    # ---- sufficient statistic -----------------------------------------
    def stat(self, z: np.ndarray) -> np.ndarray:
        return self.stat_batch(z[None, :, :])[0]

    def stat_batch(self, z: np.ndarray) -> np.ndarray:
        """S over a batch of latent configurations, shape (m, dim_stat)."""
        z = np.asarray(z, dtype=float)
        quad = np.einsum("mka,kab,mkb->m", z, self.IT, z)
        cross_y = np.einsum("mka,ka->m", z, self.Ybar)
        s1 = -0.5 * quad + cross_y
        W = self.dataset.W
        s2a = z[:, :, 0] @ W  # (m, p)
        s2b = z[:, :, 1] @ W
        return np.concatenate([s1[:, None], s2a, s2b], axis=1)

    def complete_loglik(self, theta: np.ndarray, z: np.ndarray) -> float:
        """Direct evaluation of the complete-data log-likelihood."""
        t = self.dataset.times
        resid = self.dataset.Y - (z[:, 0:1] + z[:, 1:2] * t)
        dz = z - self.mean_X_theta(theta)
        return float(-0.5 * (np.sum(resid**2) + np.sum(dz**2)))

    # ---- exact conditional law ----------------------------------------
    def posterior(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-subject Gaussian (means (N,2), covariances (N,2,2))."""
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise FloatingPointError("non-finite theta")
        b = self.Ybar + self.mean_X_theta(theta)
        means = np.einsum("kab,kb->ka", self.C, b)
        return means, self.C

    def exact_draws(
        self, theta: np.ndarray, n_draws: int, rng: np.random.Generator
    ) -> np.ndarray:
        means, _ = self.posterior(theta)
        eps = rng.standard_normal((n_draws, means.shape[0], 2))
        return means[None, :, :] + np.einsum("kab,mkb->mka", self.C_chol, eps)

    def init_latent(self, theta: np.ndarray) -> np.ndarray:
        return self.mean_X_theta(theta)

    # ---- MCMC hooks (used by sampler verification) ---------------------
    def latent_loglik(self, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
        quad = np.einsum("ka,kab,kb->k", z, self.T, z)
        return -0.5 * quad + np.einsum("ka,ka->k", z, self.Ybar)

    def latent_logprior(self, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
        dz = z - self.mean_X_theta(theta)
        return -0.5 * np.sum(dz**2, axis=1)

    def prior_proposal(self, theta: np.ndarray, eps: np.ndarray) -> np.ndarray:
        return self.mean_X_theta(theta) + eps

    # ---- exact oracles --------------------------------------------------
    def exact_mean_stat(self, theta: np.ndarray) -> np.ndarray:
        means, _ = self.posterior(theta)
        b = self.Ybar + self.mean_X_theta(theta)
        # E[z'(I+T)z] = trace((I+T) C) + m'(I+T)m with C = (I+T)^{-1}
        quad = 2.0 * means.shape[0] + np.einsum("ka,kab,kb->", means, self.IT, means)
        cross_y = np.einsum("ka,ka->", means, self.Ybar)
        s1 = -0.5 * quad + cross_y
        W = self.dataset.W
        return np.concatenate([[s1], means[:, 0] @ W, means[:, 1] @ W])

    def exact_loglik(self, theta: np.ndarray) -> float:
        b = self.Ybar + self.mean_X_theta(theta)
        quad = np.einsum("ka,kab,kb->", b, self.C, b)
        return float(-0.5 * theta @ self.A @ theta + 0.5 * quad)

    def loglik_hessian(self) -> np.ndarray:
        return self._hess

    def lipschitz_L(self) -> float:
        return self._L

    def hessian_diag_contribution(
        self, theta: np.ndarray, draws: np.ndarray
    ) -> np.ndarray:
        stats = self.stat_batch(draws)
        grads = stats[:, 1:]  # Psi(theta) S(z) per draw
        return np.diag(self.A) - np.var(grads, axis=0)

    # ---- engine conventions ---------------------------------------------
    def default_mask(self) -> np.ndarray:
        mask = np.ones(self.dim_theta, dtype=bool)
        p = self.dataset.W.shape[1]
        mask[0] = False  # intercepts stay unpenalized
        mask[p] = False
        return mask

    def project_domain(self, theta: np.ndarray) -> np.ndarray:
        nrm = float(np.linalg.norm(theta))
        if nrm >= THETA_BOUND:
            return theta * ((THETA_BOUND * (1.0 - 1e-9)) / nrm)
        return theta

    def surrogate_argmax(self, stat, penalty, theta0):
        """Maximize -theta' A theta / 2 + theta' s2 - g(theta).

        The quadratic decouples into the intercept and slope blocks, each
        sharing the Gram matrix of the covariate rows; each block is solved
        by cyclical coordinate descent with soft-threshold updates.
        """
        from .solvers import quad_cd  # local import to avoid a cycle

        stat = np.asarray(stat, dtype=float)
        b = stat[1:]
        p = self.dataset.W.shape[1]
        mask = penalty.mask_for(self.dim_theta)
        theta = np.asarray(theta0, dtype=float).copy()
        for blk in range(2):
            sl = slice(blk * p, (blk + 1) * p)
            theta[sl] = quad_cd(
                self.G, b[sl], theta[sl], penalty, mask[sl]
            )
        return theta


# ---- dataset serialization -------------------------------------------


def save_dataset(ds: LmmDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "observations.csv", "w") as fh:
        fh.write(f"# schema={DATA_SCHEMA}\n")
        fh.write("subject,time,y\n")
        for k in range(ds.N):
            for j in range(ds.J):
                fh.write(f"{k},{float(ds.times[k, j])!r},{float(ds.Y[k, j])!r}\n")
    D = ds.D
    with open(out / "covariates.csv", "w") as fh:
        fh.write(f"# schema={COV_SCHEMA}\n")
        fh.write("subject," + ",".join(f"x{i + 1}" for i in range(D)) + "\n")
        for k in range(ds.N):
            row = ",".join(repr(float(v)) for v in ds.W[k, 1:])
            fh.write(f"{k},{row}\n" if D else f"{k}\n")
    meta = {
        "model": "toy",
        "schema": DATA_SCHEMA,
        "N": ds.N,
        "J": ds.J,
        "D": D,
        "seed": ds.seed,
        "theta_star": None if ds.theta_star is None else list(ds.theta_star),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    np.savez(
        out / "cache.npz", times=ds.times, Y=ds.Y, W=ds.W,
        theta_star=np.array([]) if ds.theta_star is None else ds.theta_star,
    )


def load_dataset(in_dir) -> LmmDataset:
    src = Path(in_dir)
    meta = json.loads((src / "meta.json").read_text())
    if meta.get("schema") != DATA_SCHEMA:
        raise ValueError(f"unsupported dataset schema {meta.get('schema')!r}")
    N, J, D = meta["N"], meta["J"], meta["D"]
    times = np.zeros((N, J))
    Y = np.zeros((N, J))
    fill = np.zeros(N, dtype=int)
    with open(src / "observations.csv") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("subject"):
                continue
            k_s, t_s, y_s = line.strip().split(",")
            k = int(k_s)
            times[k, fill[k]] = float(t_s)
            Y[k, fill[k]] = float(y_s)
            fill[k] += 1
    W = np.ones((N, D + 1))
    with open(src / "covariates.csv") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("subject"):
                continue
            parts = line.strip().split(",")
            if D:
                W[int(parts[0]), 1:] = [float(v) for v in parts[1:]]
    theta_star = meta["theta_star"]
    return LmmDataset(
        times=times, Y=Y, W=W,
        theta_star=None if theta_star is None else np.asarray(theta_star),
        seed=meta["seed"],
    )
