"""Non-linear mixed model: two-compartment oral-absorption pharmacokinetics.

The latent vector per subject is z = (log Vc, log Vp, log Q, log Cl,
log ka); concentrations follow the linear three-compartment system with
first-order absorption, solved in closed form (sum of three
exponentials) with a Runge-Kutta fallback when rate constants nearly
coincide.

The fitted parameter is the scale-invariant reparameterization
theta = (mu_tilde, Sigma_11..Sigma_RR, sigma) where mu_tilde_(r) =
mu_(r) / sqrt(Omega_rr) and Sigma_rr = 1 / sqrt(Omega_rr), so that an
l1 penalty on the covariate coordinates of mu_tilde is invariant under
rescaling of the latent variables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels
from . import rng as rngmod
from .lmm import ar1_covariates
from .model_api import Model, StatLayout

R_LATENT = 5
LATENT_NAMES = ("Vc", "Vp", "Q", "Cl", "ka")

PAPER_MU_INTERCEPTS = np.array([6.61, 6.96, 5.77, 5.42, -0.51])
PAPER_OMEGA_DIAG = np.array([0.16, 0.16, 0.16, 0.04, 0.04])
# default sampling grid (hours) for J = 12, spanning absorption to washout
DEFAULT_TIMES_12 = np.array(
    [0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0, 14.0, 24.0, 36.0, 48.0]
)
DEFAULT_DOSE = 100.0
SIGMA_FLOOR = 1e-8
THETA_BOUND = 1e4

DATA_SCHEMA = "stochprox.pk-data.v1"


def _rk_conc(z: np.ndarray, times: np.ndarray, dose: float) -> np.ndarray:
    vc, vp, q, cl, ka = np.exp(z)
    k10, k12, k21 = cl / vc, q / vc, q / vp

    def rhs(_t, a):
        return [
            -ka * a[0],
            ka * a[0] + k21 * a[2] - (k10 + k12) * a[1],
            k12 * a[1] - k21 * a[2],
        ]

    tv = np.asarray(times, dtype=float)
    sol = solve_ivp(
        rhs,
        (0.0, float(tv.max()) if tv.size else 0.0),
        [dose, 0.0, 0.0],
        t_eval=tv,
        rtol=1e-10,
        atol=1e-12,
    )
    return sol.y[1] / vc


def pk_concentration(z: np.ndarray, t, dose: float) -> np.ndarray:
    """Concentration profile for one latent vector at times ``t``.

    Closed form via the hybrid rate constants; falls back to an adaptive
    Runge-Kutta integration when the rates are nearly coincident.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(np.exp(z))):
        raise FloatingPointError("latent parameters overflow the exponential")
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ValueError("times must be nonnegative")
    conc, degen = _kernels.pk_conc_batch(z[None, :], t_arr, dose)
    if degen[0]:
        out = _rk_conc(z, t_arr, dose)
    else:
        out = conc[0]
    return out if np.ndim(t) else float(out[0])


def pk_amounts(z: np.ndarray, t, dose: float) -> np.ndarray:
    """Compartment amounts (depot, central, peripheral) at times ``t``."""
    from scipy.linalg import expm

    vc, vp, q, cl, ka = np.exp(np.asarray(z, dtype=float))
    k10, k12, k21 = cl / vc, q / vc, q / vp
    K = np.array(
        [[-ka, 0.0, 0.0], [ka, -(k10 + k12), k21], [0.0, k12, -k21]]
    )
    tv = np.atleast_1d(np.asarray(t, dtype=float))
    return np.stack([expm(K * tt) @ [dose, 0.0, 0.0] for tt in tv])


def conc_batch_with_fallback(
    z: np.ndarray, times: np.ndarray, dose: float
) -> np.ndarray:
    """Batch concentrations; degenerate rows recomputed by Runge-Kutta."""
    conc, degen = _kernels.pk_conc_batch(z, times, dose)
    if np.any(degen):
        times = np.asarray(times, dtype=float)
        for i in np.flatnonzero(degen):
            row_t = times if times.ndim == 1 else times[i]
            conc[i] = _rk_conc(np.atleast_2d(z)[i], row_t, dose)
    return conc


# ---------------------------------------------------------------------------
# parameter layout


@dataclass(frozen=True)
class PkLayout:
    """Index map for theta = (mu_tilde blocks, Sigma diagonal, sigma).

    Latent coordinate r contributes an intercept plus D covariate
    coefficients when it carries covariates, an intercept only otherwise.
    """

    D: int
    covariate_rows: tuple

    @property
    def block_sizes(self) -> tuple:
        return tuple(
            1 + (self.D if carry else 0) for carry in self.covariate_rows
        )

    @property
    def mu_slices(self) -> tuple:
        out = []
        ofs = 0
        for size in self.block_sizes:
            out.append(slice(ofs, ofs + size))
            ofs += size
        return tuple(out)

    @property
    def dim_mu(self) -> int:
        return sum(self.block_sizes)

    @property
    def sigma_slice(self) -> slice:
        return slice(self.dim_mu, self.dim_mu + R_LATENT)

    @property
    def sigma_res_index(self) -> int:
        return self.dim_mu + R_LATENT

    @property
    def dim_theta(self) -> int:
        return self.dim_mu + R_LATENT + 1

    def intercept_indices(self) -> np.ndarray:
        return np.array([sl.start for sl in self.mu_slices])

    def penalized_mask(self) -> np.ndarray:
        """Covariate coefficients only; intercepts and variances are free."""
        mask = np.zeros(self.dim_theta, dtype=bool)
        for sl in self.mu_slices:
            mask[sl.start + 1 : sl.stop] = True
        return mask


@dataclass(frozen=True)
class PkDataset:
    times: np.ndarray  # (N, J)
    Y: np.ndarray  # (N, J)
    W: np.ndarray  # (N, D+1)
    dose: float
    sigma_residual: float
    mu_star: Optional[np.ndarray]
    omega_star: Optional[np.ndarray]
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


def default_effects(D: int) -> dict:
    """True covariate effects used by the simulation protocol.

    Covariate 3 acts on the central volume and covariate 8 on the
    clearance (both capped to D), with unit effect size.
    """
    eff = {}
    if D >= 3:
        eff[(0, 3)] = 1.0
    if D >= 8:
        eff[(3, 8)] = 1.0
    return eff


def build_mu_star(D: int, effects: Optional[dict] = None) -> np.ndarray:
    """Full-design mean vector: blocks of size D+1 per latent coordinate."""
    p = D + 1
    mu = np.zeros(R_LATENT * p)
    for r in range(R_LATENT):
        mu[r * p] = PAPER_MU_INTERCEPTS[r]
    if effects is None:
        effects = default_effects(D)
    for (r, cov), val in effects.items():
        if not (1 <= cov <= D):
            raise ValueError(f"covariate index {cov} outside 1..{D}")
        mu[r * p + cov] = val
    return mu


def simulate_pk(
    N: int,
    J: int,
    D: int,
    seed: int,
    dose: float = DEFAULT_DOSE,
    sigma_residual: Optional[float] = None,
    times: Optional[np.ndarray] = None,
    mu_star: Optional[np.ndarray] = None,
    omega_star: Optional[np.ndarray] = None,
    effects: Optional[dict] = None,
) -> PkDataset:
    """Simulate a PK dataset; residual noise defaults to 10% of the mean
    simulated concentration (the value actually used is recorded)."""
    if times is None:
        times = DEFAULT_TIMES_12 if J == 12 else np.linspace(0.5, 48.0, max(J, 1))
    times = np.asarray(times, dtype=float)[:J]
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if dose <= 0:
        raise ValueError("dose must be positive")
    tmat = np.tile(times, (N, 1))

    cov = ar1_covariates(N, D, 0.5, rngmod.substream(seed, rngmod.COVARIATES))
    W = np.concatenate([np.ones((N, 1)), cov], axis=1)
    if mu_star is None:
        mu_star = build_mu_star(D, effects)
    mu_star = np.asarray(mu_star, dtype=float)
    if omega_star is None:
        omega_star = PAPER_OMEGA_DIAG.copy()
    omega_star = np.asarray(omega_star, dtype=float)

    p = D + 1
    pm = W @ mu_star.reshape(R_LATENT, p).T  # (N, R)
    eps = rngmod.substream(seed, rngmod.LATENTS).standard_normal((N, R_LATENT))
    z = pm + eps * np.sqrt(omega_star)[None, :]
    f = conc_batch_with_fallback(z, tmat, dose)
    if sigma_residual is None:
        sigma_residual = 0.1 * float(np.mean(f))
    noise = rngmod.substream(seed, rngmod.NOISE).standard_normal((N, J))
    Y = f + sigma_residual * noise
    return PkDataset(
        times=tmat, Y=Y, W=W, dose=dose, sigma_residual=sigma_residual,
        mu_star=mu_star, omega_star=omega_star, seed=seed,
    )


class PkModel(Model):
    """Engine-facing PK model over the reparameterized parameter."""

    def __init__(
        self,
        dataset: PkDataset,
        covariate_rows: Optional[tuple] = None,
        pinned_omega: Optional[dict] = None,
    ):
        self.dataset = dataset
        if covariate_rows is None:
            covariate_rows = (True,) * R_LATENT
        self.layout = PkLayout(D=dataset.D, covariate_rows=tuple(covariate_rows))
        self.dim_theta = self.layout.dim_theta
        N = dataset.N
        self.dim_stat = N * R_LATENT + R_LATENT * R_LATENT + 1
        self.stat_layout = StatLayout.build(
            [(f"subject{k}", R_LATENT) for k in range(N)]
            + [("scatter", R_LATENT * R_LATENT), ("residual", 1)]
        )
        # per-block design: intercept-only rows use just the ones column
        self.W_blocks = [
            dataset.W if carry else dataset.W[:, :1]
            for carry in self.layout.covariate_rows
        ]
        self.G_blocks = [Wb.T @ Wb for Wb in self.W_blocks]
        self.pinned_sigma = {}
        if pinned_omega:
            for r, om in pinned_omega.items():
                if not (0 <= int(r) < R_LATENT):
                    raise ValueError(f"pinned coordinate {r} outside 0..4")
                if om <= 0:
                    raise ValueError("pinned variances must be positive")
                self.pinned_sigma[int(r)] = float(om) ** -0.5

    # ---- parameter bookkeeping -----------------------------------------
    def split(self, theta: np.ndarray):
        lay = self.layout
        mu = theta[: lay.dim_mu]
        sig = theta[lay.sigma_slice]
        sigma_res = theta[lay.sigma_res_index]
        return mu, sig, sigma_res

    def _check_domain(self, sig, sigma_res):
        if np.any(sig <= 0.0) or sigma_res <= 0.0:
            raise FloatingPointError("scale parameters must be positive")

    def prior_mean(self, theta: np.ndarray) -> np.ndarray:
        """X_k mu_tilde for all subjects, shape (N, R)."""
        mu, _, _ = self.split(theta)
        cols = [
            Wb @ mu[sl]
            for Wb, sl in zip(self.W_blocks, self.layout.mu_slices)
        ]
        return np.stack(cols, axis=1)

    def default_init(self, omega_init: float = 0.1) -> np.ndarray:
        """Starting point: recorded intercepts, zero covariate effects.

        The dataset header stores the simulation intercepts; like a
        practitioner starting from literature values, we use those for the
        intercepts and a flat omega_init for every latent variance.  All
        covariate coefficients (the selection targets) start at zero.
        """
        lay = self.layout
        theta = np.zeros(self.dim_theta)
        sig0 = omega_init**-0.5
        p = self.dataset.D + 1
        for r, sl in enumerate(lay.mu_slices):
            if self.dataset.mu_star is not None:
                intercept = self.dataset.mu_star.reshape(R_LATENT, p)[r, 0]
            else:
                intercept = 0.0
            sig_r = self.pinned_sigma.get(r, sig0)
            theta[sl.start] = intercept * sig_r
            theta[lay.sigma_slice.start + r] = sig_r
        theta[lay.sigma_res_index] = max(float(np.std(self.dataset.Y)), 1e-2)
        return theta

    # ---- smooth part and gradient structure ------------------------------
    def phi(self, theta: np.ndarray) -> float:
        mu, sig, sigma_res = self.split(theta)
        self._check_domain(sig, sigma_res)
        N, J = self.dataset.N, self.dataset.J
        pm = self.prior_mean(theta)
        return float(
            -J * N * np.log(sigma_res)
            + N * np.sum(np.log(sig))
            - 0.5 * np.sum(pm**2)
        )

    def grad_phi(self, theta: np.ndarray) -> np.ndarray:
        mu, sig, sigma_res = self.split(theta)
        self._check_domain(sig, sigma_res)
        N, J = self.dataset.N, self.dataset.J
        lay = self.layout
        out = np.zeros_like(theta)
        for sl, Wb, Gb in zip(lay.mu_slices, self.W_blocks, self.G_blocks):
            out[sl] = -(Gb @ theta[sl])
        out[lay.sigma_slice] = N / sig
        out[lay.sigma_res_index] = -J * N / sigma_res
        return out

    def psi(self, theta: np.ndarray) -> np.ndarray:
        mu, sig, sigma_res = self.split(theta)
        self._check_domain(sig, sigma_res)
        pm = self.prior_mean(theta)
        psi1 = pm * sig[None, :]  # (N, R)
        psi2 = np.diag(-0.5 * sig**2)
        psi3 = -0.5 / sigma_res**2
        return np.concatenate([psi1.ravel(), psi2.ravel(), [psi3]])

    def Psi(self, theta: np.ndarray) -> np.ndarray:
        """Dense transposed Jacobian of psi (kept for contract checks)."""
        mu, sig, sigma_res = self.split(theta)
        self._check_domain(sig, sigma_res)
        N = self.dataset.N
        lay = self.layout
        out = np.zeros((self.dim_theta, self.dim_stat))
        pm = self.prior_mean(theta)
        for k in range(N):
            for r in range(R_LATENT):
                col = k * R_LATENT + r
                sl = lay.mu_slices[r]
                out[sl, col] = sig[r] * self.W_blocks[r][k]
                out[lay.sigma_slice.start + r, col] = pm[k, r]
        scatter0 = N * R_LATENT
        for r in range(R_LATENT):
            col = scatter0 + r * R_LATENT + r
            out[lay.sigma_slice.start + r, col] = -sig[r]
        out[lay.sigma_res_index, -1] = 1.0 / sigma_res**3
        return out

    def apply_Psi(self, theta: np.ndarray, stat: np.ndarray) -> np.ndarray:
        mu, sig, sigma_res = self.split(theta)
        self._check_domain(sig, sigma_res)
        N = self.dataset.N
        lay = self.layout
        stat = np.asarray(stat, dtype=float)
        s1 = stat[: N * R_LATENT].reshape(N, R_LATENT)
        s2_diag = stat[N * R_LATENT : -1].reshape(R_LATENT, R_LATENT).diagonal()
        s3 = stat[-1]
        pm = self.prior_mean(theta)
        out = np.zeros_like(theta)
        for r, (sl, Wb) in enumerate(zip(lay.mu_slices, self.W_blocks)):
            out[sl] = sig[r] * (Wb.T @ s1[:, r])
        out[lay.sigma_slice] = np.einsum("kr,kr->r", pm, s1) - sig * s2_diag
        out[lay.sigma_res_index] = s3 / sigma_res**3
        return out

    # ---- sufficient statistic -------------------------------------------
    def stat(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        pred = conc_batch_with_fallback(z, self.dataset.times, self.dataset.dose)
        sse = float(np.sum((self.dataset.Y - pred) ** 2))
        return self.stat_from_sse(z, sse)

    def stat_from_sse(self, z: np.ndarray, sse: float) -> np.ndarray:
        scatter = z.T @ z
        return np.concatenate([z.ravel(), scatter.ravel(), [sse]])

    def complete_loglik(self, theta: np.ndarray, z: np.ndarray) -> float:
        """Direct evaluation, matching phi + <S, psi> up to the same constant."""
        mu, sig, sigma_res = self.split(theta)
        self._check_domain(sig, sigma_res)
        N, J = self.dataset.N, self.dataset.J
        pred = conc_batch_with_fallback(z, self.dataset.times, self.dataset.dose)
        sse = np.sum((self.dataset.Y - pred) ** 2)
        dz = z * sig[None, :] - self.prior_mean(theta)
        return float(
            -J * N * np.log(sigma_res)
            - 0.5 * sse / sigma_res**2
            + N * np.sum(np.log(sig))
            - 0.5 * np.sum(dz**2)
        )

    # ---- latent sampling hooks --------------------------------------------
    def init_latent(self, theta: np.ndarray) -> np.ndarray:
        _, sig, _ = self.split(theta)
        return self.prior_mean(theta) / sig[None, :]

    def latent_loglik(self, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
        _, _, sigma_res = self.split(theta)
        pred = conc_batch_with_fallback(z, self.dataset.times, self.dataset.dose)
        sse = np.sum((self.dataset.Y - pred) ** 2, axis=1)
        return -0.5 * sse / sigma_res**2

    def latent_logprior(self, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
        _, sig, _ = self.split(theta)
        dz = z * sig[None, :] - self.prior_mean(theta)
        return -0.5 * np.sum(dz**2, axis=1)

    def prior_proposal(self, theta: np.ndarray, eps: np.ndarray) -> np.ndarray:
        _, sig, _ = self.split(theta)
        return (self.prior_mean(theta) + eps) / sig[None, :]

    # ---- engine hooks -------------------------------------------------------
    def default_mask(self) -> np.ndarray:
        return self.layout.penalized_mask()

    def project_domain(self, theta: np.ndarray) -> np.ndarray:
        lay = self.layout
        theta = theta.copy()
        sl = lay.sigma_slice
        theta[sl] = np.maximum(theta[sl], SIGMA_FLOOR)
        for r, val in self.pinned_sigma.items():
            theta[sl.start + r] = val
        i = lay.sigma_res_index
        theta[i] = max(theta[i], SIGMA_FLOOR)
        nrm = float(np.linalg.norm(theta))
        if nrm >= THETA_BOUND:
            theta *= (THETA_BOUND * (1.0 - 1e-9)) / nrm
            theta[sl] = np.maximum(theta[sl], SIGMA_FLOOR)
            for r, val in self.pinned_sigma.items():
                theta[sl.start + r] = val
            theta[i] = max(theta[i], SIGMA_FLOOR)
        return theta

    def hessian_diag_contribution(
        self, theta: np.ndarray, draws: np.ndarray, stats: Optional[np.ndarray] = None
    ) -> np.ndarray:
        mu, sig, sigma_res = self.split(theta)
        N, J = self.dataset.N, self.dataset.J
        lay = self.layout
        if stats is None:
            stats = np.stack([self.stat(z) for z in draws])
        s_bar = stats.mean(axis=0)
        s2_diag = s_bar[N * R_LATENT : -1].reshape(R_LATENT, R_LATENT).diagonal()
        s3 = s_bar[-1]
        # complete-information part: -diag of hessian of phi + <s, psi>
        out = np.zeros(self.dim_theta)
        for sl, Gb in zip(lay.mu_slices, self.G_blocks):
            out[sl] = np.diag(Gb)
        out[lay.sigma_slice] = N / sig**2 + s2_diag
        out[lay.sigma_res_index] = -J * N / sigma_res**2 + 3.0 * s3 / sigma_res**4
        # conditional-score variability correction
        if stats.shape[0] > 1:
            per_draw = np.stack([self.apply_Psi(theta, s) for s in stats])
            out -= np.var(per_draw, axis=0)
        return out

    def surrogate_argmax(self, stat, penalty, theta0):
        """Exact maximizer of phi + <stat, psi> - g over theta.

        The residual scale has a closed form.  Each latent coordinate's
        (intercept, scale) pair is maximized jointly (the intercept is
        linear in the scale at stationarity, leaving one scalar
        quadratic); covariate coefficients are handled by penalized
        coordinate descent.  Blocks are cycled to convergence.
        """
        from .solvers import CD_MAX_CYCLES, CD_TOL, quad_cd

        stat = np.asarray(stat, dtype=float)
        N, J = self.dataset.N, self.dataset.J
        lay = self.layout
        s1 = stat[: N * R_LATENT].reshape(N, R_LATENT)
        s2_diag = stat[N * R_LATENT : -1].reshape(R_LATENT, R_LATENT).diagonal()
        s3 = stat[-1]
        mask = penalty.mask_for(self.dim_theta)

        theta = np.asarray(theta0, dtype=float).copy()
        theta[lay.sigma_res_index] = max(
            np.sqrt(max(s3, 0.0) / (J * N)), SIGMA_FLOOR
        )
        u0 = s1.sum(axis=0)  # per-coordinate sum of subject blocks
        for _ in range(CD_MAX_CYCLES):
            max_change = 0.0
            sig = theta[lay.sigma_slice]
            for r, sl in enumerate(lay.mu_slices):
                Wb = self.W_blocks[r]
                new_mu = quad_cd(
                    self.G_blocks[r], sig[r] * (Wb.T @ s1[:, r]), theta[sl],
                    penalty, mask[sl],
                )
                max_change = max(
                    max_change, float(np.max(np.abs(new_mu - theta[sl])))
                )
                theta[sl] = new_mu

                idx = lay.sigma_slice.start + r
                if mask[sl.start]:
                    # penalized intercept: scale-only update given mu
                    pm_r = Wb @ theta[sl]
                    c_r = float(pm_r @ s1[:, r])
                    if r in self.pinned_sigma:
                        new_sig = self.pinned_sigma[r]
                    elif s2_diag[r] > 0.0:
                        new_sig = (
                            c_r + np.sqrt(c_r**2 + 4.0 * N * s2_diag[r])
                        ) / (2.0 * s2_diag[r])
                    else:
                        new_sig = theta[idx]
                    new_sig = min(max(new_sig, SIGMA_FLOOR), 1e8)
                    max_change = max(max_change, abs(new_sig - theta[idx]))
                    theta[idx] = new_sig
                    continue
                # joint refinement of (intercept, scale): with covariate
                # terms h_k fixed, the stationary intercept is
                # a = (s u0 - sum h) / N, and the scale solves
                # (q - u0^2/N) s^2 - (c - u0 sum(h)/N) s - N = 0
                h = Wb[:, 1:] @ theta[sl][1:] if sl.stop - sl.start > 1 else (
                    np.zeros(N)
                )
                H = float(h.sum())
                C = float(h @ s1[:, r])
                if r in self.pinned_sigma:
                    new_sig = self.pinned_sigma[r]
                else:
                    a2 = s2_diag[r] - u0[r] ** 2 / N
                    b2 = C - H * u0[r] / N
                    if a2 > 0.0:
                        new_sig = (b2 + np.sqrt(b2 * b2 + 4.0 * a2 * N)) / (
                            2.0 * a2
                        )
                    else:
                        new_sig = theta[idx]
                new_sig = min(max(new_sig, SIGMA_FLOOR), 1e8)
                new_a = (new_sig * u0[r] - H) / N
                max_change = max(
                    max_change,
                    abs(new_sig - theta[idx]),
                    abs(new_a - theta[sl.start]),
                )
                theta[idx] = new_sig
                theta[sl.start] = new_a
            if max_change < CD_TOL:
                return theta
        raise RuntimeError(
            f"penalized M-step did not converge (last change {max_change:.3e})"
        )


# ---- dataset serialization -------------------------------------------


def save_dataset(ds: PkDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "observations.csv", "w") as fh:
        fh.write(f"# schema={DATA_SCHEMA}\n")
        fh.write("subject,time,concentration\n")
        for k in range(ds.N):
            for j in range(ds.J):
                fh.write(f"{k},{float(ds.times[k, j])!r},{float(ds.Y[k, j])!r}\n")
    D = ds.D
    with open(out / "covariates.csv", "w") as fh:
        fh.write("# schema=stochprox.covariates.v1\n")
        fh.write("subject," + ",".join(f"x{i + 1}" for i in range(D)) + "\n")
        for k in range(ds.N):
            row = ",".join(repr(float(v)) for v in ds.W[k, 1:])
            fh.write(f"{k},{row}\n" if D else f"{k}\n")
    meta = {
        "model": "pk",
        "schema": DATA_SCHEMA,
        "N": ds.N,
        "J": ds.J,
        "D": D,
        "seed": ds.seed,
        "dose": ds.dose,
        "sigma_residual": ds.sigma_residual,
        "mu_star": None if ds.mu_star is None else list(ds.mu_star),
        "omega_star": None if ds.omega_star is None else list(ds.omega_star),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    np.savez(
        out / "cache.npz", times=ds.times, Y=ds.Y, W=ds.W,
        mu_star=np.array([]) if ds.mu_star is None else ds.mu_star,
        omega_star=np.array([]) if ds.omega_star is None else ds.omega_star,
    )


def load_dataset(in_dir) -> PkDataset:
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
    mu_star = meta.get("mu_star")
    omega_star = meta.get("omega_star")
    return PkDataset(
        times=times, Y=Y, W=W, dose=meta["dose"],
        sigma_residual=meta["sigma_residual"],
        mu_star=None if mu_star is None else np.asarray(mu_star),
        omega_star=None if omega_star is None else np.asarray(omega_star),
        seed=meta["seed"],
    )
