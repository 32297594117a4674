"""Truncated Dirichlet-process mixture blocks and their Gibbs updates.

Two block types are used by the sampler: a scalar mixture of normals for the
regression error and multivariate mixtures for the score-space measurement
errors and latent scores. Component parameters carry conjugate priors
(normal-inverse-gamma, normal-inverse-Wishart) so every update is a draw
from a closed-form full conditional. Error blocks are kept identifiable by
recentering the mixture mean to zero after each sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import invwishart

from .errors import (
    DimensionMismatch,
    EmptyResiduals,
    InvalidDegreesOfFreedom,
    NonPositiveConcentration,
    NonSpdScale,
)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class NIGParams:
    """Normal-inverse-gamma hyperparameters for (mean, variance)."""

    m0: float = 0.0
    k0: float = 0.01
    a0: float = 1.0
    b0: float = 1.0


@dataclass(frozen=True)
class NIWParams:
    """Normal-inverse-Wishart hyperparameters for (mean vector, covariance)."""

    mu0: np.ndarray
    k0: float
    nu0: float
    psi0: np.ndarray


@dataclass(frozen=True)
class ScalarMixtureBlock:
    """Truncated DPM of univariate normals with an optional zero-mean constraint."""

    weights: np.ndarray       # K_comp simplex
    means: np.ndarray         # K_comp
    variances: np.ndarray     # K_comp, positive
    allocations: np.ndarray   # n ints in [0, K_comp)
    concentration: float
    prior: NIGParams

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def mixture_mean(self) -> float:
        return float(self.weights @ self.means)


@dataclass(frozen=True)
class MvMixtureBlock:
    """Truncated DPM of K-dimensional normals."""

    weights: np.ndarray       # K_comp simplex
    means: np.ndarray         # K_comp x K
    covariances: np.ndarray   # K_comp x K x K, SPD
    allocations: np.ndarray   # n ints
    concentration: float
    prior: NIWParams

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mixture_mean(self) -> np.ndarray:
        return self.weights @ self.means


# --- elementary kernels -----------------------------------------------------

def sample_dirichlet(rng: np.random.Generator, concentration) -> np.ndarray:
    conc = np.asarray(concentration, dtype=float)
    if np.any(conc <= 0):
        raise NonPositiveConcentration("all Dirichlet concentrations must be > 0")
    if len(conc) == 1:
        return np.array([1.0])
    g = rng.gamma(conc)
    total = g.sum()
    if total == 0.0:  # all-underflow corner with tiny concentrations
        g = np.full_like(conc, 1.0 / len(conc))
        total = 1.0
    return g / total


def sample_inverse_wishart(rng: np.random.Generator, nu: float, psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    dim = psi.shape[0]
    if nu < dim:
        raise InvalidDegreesOfFreedom(f"need nu >= dim = {dim}, got {nu}")
    try:
        np.linalg.cholesky(psi)
    except np.linalg.LinAlgError as exc:
        raise NonSpdScale("inverse-Wishart scale matrix is not SPD") from exc
    return invwishart.rvs(df=nu, scale=psi, random_state=rng).reshape(dim, dim)


def sample_inverse_gamma(rng: np.random.Generator, shape: float, rate: float) -> float:
    return float(rate / rng.gamma(shape))


def _sample_categorical_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of a row-stochastic matrix."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    return np.minimum((u[:, None] > cum).sum(axis=1), probs.shape[1] - 1)


def _normalize_log_rows(logp: np.ndarray) -> np.ndarray:
    logp = logp - logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


# --- densities ---------------------------------------------------------------

def scalar_mixture_logpdf(block: ScalarMixtureBlock, value) -> np.ndarray | float:
    """log sum_k pi_k Normal(value | mu_k, sigma2_k)."""
    x = np.atleast_1d(np.asarray(value, dtype=float))
    lp = (
        np.log(block.weights)[None, :]
        - 0.5 * _LOG_2PI
        - 0.5 * np.log(block.variances)[None, :]
        - 0.5 * (x[:, None] - block.means[None, :]) ** 2 / block.variances[None, :]
    )
    m = lp.max(axis=1, keepdims=True)
    out = (m + np.log(np.exp(lp - m).sum(axis=1, keepdims=True))).ravel()
    return float(out[0]) if np.isscalar(value) or np.asarray(value).ndim == 0 else out


def _mvn_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise MVN log density via Cholesky."""
    L = np.linalg.cholesky(cov)
    dev = np.linalg.solve(L, (x - mean).T)
    maha = np.sum(dev**2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    k = x.shape[1]
    return -0.5 * (k * _LOG_2PI + logdet + maha)


def mv_mixture_logpdf(block: MvMixtureBlock, value: np.ndarray) -> np.ndarray | float:
    x = np.atleast_2d(np.asarray(value, dtype=float))
    lp = np.column_stack(
        [
            np.log(block.weights[k]) + _mvn_logpdf(x, block.means[k], block.covariances[k])
            for k in range(block.n_components)
        ]
    )
    m = lp.max(axis=1, keepdims=True)
    out = (m + np.log(np.exp(lp - m).sum(axis=1, keepdims=True))).ravel()
    return float(out[0]) if np.asarray(value).ndim == 1 else out


def log_density_mixture(block, value):
    """Mixture log density, dispatching on block type."""
    if isinstance(block, ScalarMixtureBlock):
        return scalar_mixture_logpdf(block, value)
    return mv_mixture_logpdf(block, value)


# --- conjugate component updates ---------------------------------------------

def _nig_posterior(prior: NIGParams, y: np.ndarray) -> NIGParams:
    n = len(y)
    if n == 0:
        return prior
    ybar = float(y.mean())
    kn = prior.k0 + n
    mn = (prior.k0 * prior.m0 + n * ybar) / kn
    an = prior.a0 + n / 2.0
    ss = float(((y - ybar) ** 2).sum())
    bn = prior.b0 + 0.5 * ss + prior.k0 * n * (ybar - prior.m0) ** 2 / (2.0 * kn)
    return NIGParams(m0=mn, k0=kn, a0=an, b0=bn)


def sample_nig(rng: np.random.Generator, params: NIGParams) -> tuple[float, float]:
    sigma2 = sample_inverse_gamma(rng, params.a0, params.b0)
    mu = params.m0 + np.sqrt(sigma2 / params.k0) * rng.standard_normal()
    return float(mu), float(sigma2)


def _niw_posterior(prior: NIWParams, x: np.ndarray) -> NIWParams:
    n = x.shape[0]
    if n == 0:
        return prior
    xbar = x.mean(axis=0)
    kn = prior.k0 + n
    mun = (prior.k0 * prior.mu0 + n * xbar) / kn
    nun = prior.nu0 + n
    dev = x - xbar
    s = dev.T @ dev
    d0 = (xbar - prior.mu0)[:, None]
    psin = prior.psi0 + s + (prior.k0 * n / kn) * (d0 @ d0.T)
    return NIWParams(mu0=mun, k0=kn, nu0=nun, psi0=psin)


def sample_niw(rng: np.random.Generator, params: NIWParams) -> tuple[np.ndarray, np.ndarray]:
    cov = sample_inverse_wishart(rng, params.nu0, params.psi0)
    L = np.linalg.cholesky(cov / params.k0)
    mu = params.mu0 + L @ rng.standard_normal(len(params.mu0))
    return mu, cov


# --- block sweeps -------------------------------------------------------------

def gibbs_update_scalar_mixture(
    block: ScalarMixtureBlock,
    residuals: np.ndarray,
    rng: np.random.Generator,
    recenter: bool = True,
) -> tuple[ScalarMixtureBlock, float]:
    """One sweep of allocations, component parameters, and weights.

    Returns the updated block and the recentering shift (the pre-recentering
    mixture mean), which the caller absorbs into the model intercept.
    """
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise EmptyResiduals("scalar mixture update needs at least one residual")
    kc = block.n_components

    logp = (
        np.log(block.weights)[None, :]
        - 0.5 * np.log(block.variances)[None, :]
        - 0.5 * (r[:, None] - block.means[None, :]) ** 2 / block.variances[None, :]
    )
    probs = _normalize_log_rows(logp)
    alloc = _sample_categorical_rows(rng, probs)

    means = np.empty(kc)
    variances = np.empty(kc)
    counts = np.bincount(alloc, minlength=kc).astype(float)
    for k in range(kc):
        post = _nig_posterior(block.prior, r[alloc == k])
        means[k], variances[k] = sample_nig(rng, post)

    weights = sample_dirichlet(rng, counts + block.concentration / kc)

    shift = float(weights @ means)
    if recenter:
        means = means - shift
    new = replace(
        block, weights=weights, means=means, variances=variances, allocations=alloc
    )
    return new, shift


def gibbs_update_mv_mixture(
    block: MvMixtureBlock,
    residual_vectors: np.ndarray,
    rng: np.random.Generator,
    enforce_zero_mean: bool,
) -> tuple[MvMixtureBlock, np.ndarray]:
    """Multivariate analog with normal-inverse-Wishart component updates."""
    x = np.asarray(residual_vectors, dtype=float)
    if x.ndim != 2 or x.shape[1] != block.dim:
        raise DimensionMismatch(
            f"residual vectors must be n x {block.dim}, got shape {x.shape}"
        )
    kc = block.n_components

    logp = np.column_stack(
        [
            np.log(block.weights[k]) + _mvn_logpdf(x, block.means[k], block.covariances[k])
            for k in range(kc)
        ]
    )
    probs = _normalize_log_rows(logp)
    alloc = _sample_categorical_rows(rng, probs)

    means = np.empty_like(block.means)
    covs = np.empty_like(block.covariances)
    counts = np.bincount(alloc, minlength=kc).astype(float)
    for k in range(kc):
        post = _niw_posterior(block.prior, x[alloc == k])
        means[k], covs[k] = sample_niw(rng, post)

    weights = sample_dirichlet(rng, counts + block.concentration / kc)

    shift = weights @ means
    if enforce_zero_mean:
        means = means - shift
    new = replace(
        block, weights=weights, means=means, covariances=covs, allocations=alloc
    )
    return new, shift


# --- prior simulation (initialization and sampler-correctness tests) ----------

def sample_scalar_block_from_prior(
    rng: np.random.Generator,
    n_components: int,
    n_obs: int,
    concentration: float,
    prior: NIGParams,
) -> ScalarMixtureBlock:
    weights = sample_dirichlet(rng, np.full(n_components, concentration / n_components))
    means = np.empty(n_components)
    variances = np.empty(n_components)
    for k in range(n_components):
        means[k], variances[k] = sample_nig(rng, prior)
    alloc = _sample_categorical_rows(rng, np.tile(weights, (n_obs, 1)))
    return ScalarMixtureBlock(
        weights=weights,
        means=means,
        variances=variances,
        allocations=alloc,
        concentration=concentration,
        prior=prior,
    )


def sample_mv_block_from_prior(
    rng: np.random.Generator,
    n_components: int,
    n_obs: int,
    concentration: float,
    prior: NIWParams,
) -> MvMixtureBlock:
    weights = sample_dirichlet(rng, np.full(n_components, concentration / n_components))
    dim = len(prior.mu0)
    means = np.empty((n_components, dim))
    covs = np.empty((n_components, dim, dim))
    for k in range(n_components):
        means[k], covs[k] = sample_niw(rng, prior)
    alloc = _sample_categorical_rows(rng, np.tile(weights, (n_obs, 1)))
    return MvMixtureBlock(
        weights=weights,
        means=means,
        covariances=covs,
        allocations=alloc,
        concentration=concentration,
        prior=prior,
    )


def sample_scalar_observations(
    block: ScalarMixtureBlock, rng: np.random.Generator
) -> np.ndarray:
    """Draw one observation per allocation from the allocated components."""
    z = block.allocations
    return block.means[z] + np.sqrt(block.variances[z]) * rng.standard_normal(len(z))


def sample_mv_observations(block: MvMixtureBlock, rng: np.random.Generator) -> np.ndarray:
    z = block.allocations
    out = np.empty((len(z), block.dim))
    for k in range(block.n_components):
        idx = np.flatnonzero(z == k)
        if len(idx) == 0:
            continue
        L = np.linalg.cholesky(block.covariances[k])
        out[idx] = block.means[k] + rng.standard_normal((len(idx), block.dim)) @ L.T
    return out


def resample_allocations_from_weights(
    block, rng: np.random.Generator
):
    """Redraw allocations from the mixture weights alone (prior predictive)."""
    n = len(block.allocations)
    alloc = _sample_categorical_rows(rng, np.tile(block.weights, (n, 1)))
    return replace(block, allocations=alloc)
