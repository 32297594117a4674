"""Joint model assembly and the blocked Gibbs sampler.

The response is regressed on error-free covariates and the latent basis
scores of the functional covariate. Two noisy score matrices (the observed
curve and the rescaled instrument) identify the latent scores. All error
terms carry truncated DPM priors; the functional coefficient carries a
second-order difference smoothing prior with an inverse-gamma smoothing
variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from sklearn.cluster import KMeans

from .errors import DimensionMismatch, NumericalFailure, RankDeficientZ
from .fda import BasisSystem, ScoreMatrix
from .mixtures import (
    MvMixtureBlock,
    NIGParams,
    NIWParams,
    ScalarMixtureBlock,
    gibbs_update_mv_mixture,
    gibbs_update_scalar_mixture,
    sample_inverse_gamma,
)
from .rng import make_rng


@dataclass(frozen=True)
class ModelInputs:
    """Aligned response, covariates, and score matrices."""

    y: np.ndarray              # n
    z: np.ndarray              # n x p (p may be 0)
    wt: ScoreMatrix            # scores of the observed curves
    mt: ScoreMatrix            # scores of the delta-scaled instrument
    basis: BasisSystem

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.size == 0:
            z = np.zeros((len(y), 0))
        n = len(y)
        if z.shape[0] != n or self.wt.scores.shape[0] != n or self.mt.scores.shape[0] != n:
            raise DimensionMismatch("row counts of y, z, wt, mt must agree")
        if self.wt.scores.shape[1] != self.basis.K or self.mt.scores.shape[1] != self.basis.K:
            raise DimensionMismatch("score matrices must have K columns")
        if z.shape[1] > 0 and np.linalg.matrix_rank(z) < z.shape[1]:
            raise RankDeficientZ("error-free covariate matrix is rank deficient")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 2000
    burn_in: int = 500
    thin: int = 1
    seed: int = 0
    n_chains: int = 1
    # truncation levels
    k_eps: int = 5
    k_u: int = 5
    k_w: int = 5
    k_x: int = 5
    # DP concentrations
    alpha_eps: float = 1.0
    alpha_u: float = 1.0
    alpha_w: float = 1.0
    alpha_x: float = 1.0
    # scalar error NIG prior
    nig: NIGParams = field(default_factory=NIGParams)
    # multivariate NIW prior shape (nu0 and psi scale resolved per block
    # from the data when left as None)
    niw_k0: float = 0.01
    niw_nu0: float | None = None
    niw_psi_scale: float | None = None
    # smoothing variance prior
    a_tau: float = 1.0
    b_tau: float = 0.005
    # the simulation study fits without an intercept (the generator has none
    # and the response is not centered); data analysis keeps it
    fit_intercept: bool = True
    # latent-score snapshots are stored every (thin * xtilde_stride) iterations
    xtilde_stride: int = 10
    store_xtilde: bool = True
    check_invariants: bool = False

    def __post_init__(self):
        if not (self.n_iter > self.burn_in >= 0):
            raise ValueError("need n_iter > burn_in >= 0")
        if self.thin < 1 or self.n_chains < 1:
            raise ValueError("thin and n_chains must be >= 1")

    @property
    def draw_count(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


@dataclass
class McmcState:
    alpha0: float
    beta_z: np.ndarray
    gamma: np.ndarray
    tau: float
    xtilde: np.ndarray
    eps_block: ScalarMixtureBlock
    u_block: MvMixtureBlock
    w_block: MvMixtureBlock
    x_block: MvMixtureBlock


@dataclass(frozen=True)
class PosteriorDraws:
    """Retained draws of one chain (or a merge of several)."""

    iterations: np.ndarray       # d
    alpha0: np.ndarray           # d
    beta_z: np.ndarray           # d x p
    gamma: np.ndarray            # d x K
    tau: np.ndarray              # d
    x_allocations: np.ndarray    # d x n latent-score component labels
    xtilde_iterations: np.ndarray | None = None
    xtilde: np.ndarray | None = None   # m x n x K snapshots

    @property
    def draw_count(self) -> int:
        return len(self.iterations)


def merge_draws(parts: list[PosteriorDraws]) -> PosteriorDraws:
    """Concatenate chains in the order given."""
    have_xt = all(p.xtilde is not None for p in parts)
    return PosteriorDraws(
        iterations=np.concatenate([p.iterations for p in parts]),
        alpha0=np.concatenate([p.alpha0 for p in parts]),
        beta_z=np.concatenate([p.beta_z for p in parts]),
        gamma=np.concatenate([p.gamma for p in parts]),
        tau=np.concatenate([p.tau for p in parts]),
        x_allocations=np.concatenate([p.x_allocations for p in parts]),
        xtilde_iterations=(
            np.concatenate([p.xtilde_iterations for p in parts]) if have_xt else None
        ),
        xtilde=np.concatenate([p.xtilde for p in parts]) if have_xt else None,
    )


# --- initialization -----------------------------------------------------------

def _kmeans_labels(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if data.ndim == 1:
        data = data[:, None]
    k = min(k, len(np.unique(data, axis=0)))
    km = KMeans(n_clusters=k, n_init=3, random_state=int(rng.integers(2**31 - 1)))
    return km.fit_predict(data)


def _init_scalar_block(
    residuals: np.ndarray, k_comp: int, concentration: float, prior: NIGParams,
    rng: np.random.Generator,
) -> ScalarMixtureBlock:
    n = len(residuals)
    labels = _kmeans_labels(residuals, k_comp, rng)
    overall_var = max(float(np.var(residuals)), 1e-8)
    means = np.zeros(k_comp)
    variances = np.full(k_comp, overall_var)
    counts = np.bincount(labels, minlength=k_comp).astype(float)
    for k in range(k_comp):
        sel = residuals[labels == k]
        if len(sel) > 0:
            means[k] = sel.mean()
        if len(sel) > 1:
            variances[k] = max(float(sel.var()), 1e-4 * overall_var)
    weights = (counts + concentration / k_comp)
    weights /= weights.sum()
    return ScalarMixtureBlock(
        weights=weights, means=means, variances=variances,
        allocations=labels.astype(np.int64), concentration=concentration, prior=prior,
    )


def _init_mv_block(
    vectors: np.ndarray, k_comp: int, concentration: float, prior: NIWParams,
    rng: np.random.Generator,
) -> MvMixtureBlock:
    n, dim = vectors.shape
    labels = _kmeans_labels(vectors, k_comp, rng)
    overall = np.cov(vectors, rowvar=False) if n > 1 else np.eye(dim)
    overall = np.atleast_2d(overall) + 1e-8 * np.eye(dim) * max(np.trace(np.atleast_2d(overall)) / dim, 1.0)
    means = np.zeros((k_comp, dim))
    covs = np.tile(overall, (k_comp, 1, 1))
    counts = np.bincount(labels, minlength=k_comp).astype(float)
    for k in range(k_comp):
        sel = vectors[labels == k]
        if len(sel) > 0:
            means[k] = sel.mean(axis=0)
        if len(sel) > dim:
            c = np.cov(sel, rowvar=False) + 1e-6 * np.eye(dim) * max(np.trace(overall) / dim, 1e-8)
            covs[k] = c
    weights = (counts + concentration / k_comp)
    weights /= weights.sum()
    return MvMixtureBlock(
        weights=weights, means=means, covariances=covs,
        allocations=labels.astype(np.int64), concentration=concentration, prior=prior,
    )


def _niw_prior_for(residuals: np.ndarray, config: McmcConfig, dim: int) -> NIWParams:
    v = float(np.mean(np.var(residuals, axis=0)))
    if config.niw_psi_scale is not None:
        v = config.niw_psi_scale
    v = max(v, 1e-8)
    nu0 = config.niw_nu0 if config.niw_nu0 is not None else dim + 2.0
    return NIWParams(mu0=np.zeros(dim), k0=config.niw_k0, nu0=nu0, psi0=v * np.eye(dim))


def initialize(
    inputs: ModelInputs, config: McmcConfig, rng: np.random.Generator,
    clamp_x: bool = False,
) -> McmcState:
    """Data-driven starting state: moment-matched blocks, ridge-started gamma."""
    K = inputs.basis.K
    xt = inputs.wt.scores.copy() if clamp_x else 0.5 * (inputs.wt.scores + inputs.mt.scores)

    xtx = xt.T @ xt + inputs.basis.penalty + 1e-10 * np.eye(K)
    gamma = np.linalg.solve(xtx, xt.T @ inputs.y)

    resid = inputs.y - xt @ gamma
    if config.fit_intercept:
        design = np.column_stack([np.ones(inputs.n), inputs.z])
        coef, *_ = np.linalg.lstsq(design, resid, rcond=None)
        alpha0 = float(coef[0])
        beta_z = coef[1:]
    else:
        alpha0 = 0.0
        if inputs.p > 0:
            beta_z, *_ = np.linalg.lstsq(inputs.z, resid, rcond=None)
        else:
            beta_z = np.zeros(0)

    r = inputs.y - alpha0 - inputs.z @ beta_z - xt @ gamma
    eps_block = _init_scalar_block(r, config.k_eps, config.alpha_eps, config.nig, rng)
    shift = eps_block.mixture_mean()
    eps_block = replace(eps_block, means=eps_block.means - shift)
    if config.fit_intercept:
        alpha0 += shift

    u_res = inputs.wt.scores - xt
    w_res = inputs.mt.scores - xt
    u_block = _init_mv_block(
        u_res, config.k_u, config.alpha_u, _niw_prior_for(u_res, config, K), rng
    )
    u_block = replace(u_block, means=u_block.means - u_block.mixture_mean())
    w_block = _init_mv_block(
        w_res, config.k_w, config.alpha_w, _niw_prior_for(w_res, config, K), rng
    )
    w_block = replace(w_block, means=w_block.means - w_block.mixture_mean())
    x_block = _init_mv_block(
        xt, config.k_x, config.alpha_x, _niw_prior_for(xt, config, K), rng
    )

    return McmcState(
        alpha0=alpha0, beta_z=beta_z, gamma=gamma, tau=1.0, xtilde=xt,
        eps_block=eps_block, u_block=u_block, w_block=w_block, x_block=x_block,
    )


# --- one Gibbs sweep ------------------------------------------------------------

def _component_precisions(block: MvMixtureBlock) -> np.ndarray:
    out = np.empty_like(block.covariances)
    eye = np.eye(block.dim)
    for k in range(block.n_components):
        c, low = cho_factor(block.covariances[k], lower=True)
        out[k] = cho_solve((c, low), eye)
    return out


def _update_latent_scores(
    state: McmcState, inputs: ModelInputs, rng: np.random.Generator
) -> np.ndarray:
    """Draw each latent score row from its conditional MVN, grouped by
    the joint component allocation so each group shares one Cholesky."""
    n, K = state.xtilde.shape
    prec_u = _component_precisions(state.u_block)
    prec_w = _component_precisions(state.w_block)
    prec_x = _component_precisions(state.x_block)

    zu = state.u_block.allocations
    zw = state.w_block.allocations
    zx = state.x_block.allocations
    ze = state.eps_block.allocations

    gamma = state.gamma
    sig2 = state.eps_block.variances
    mu_eps = state.eps_block.means
    y_res = inputs.y - state.alpha0 - inputs.z @ state.beta_z - mu_eps[ze]

    codes = ((zu * state.w_block.n_components + zw) * state.x_block.n_components + zx) \
        * state.eps_block.n_components + ze
    new_xt = np.empty((n, K))
    noise = rng.standard_normal((n, K))
    for code in np.unique(codes):
        idx = np.flatnonzero(codes == code)
        ku, kw, kx, ke = (
            zu[idx[0]], zw[idx[0]], zx[idx[0]], ze[idx[0]],
        )
        A = (
            prec_u[ku] + prec_w[kw] + prec_x[kx]
            + np.outer(gamma, gamma) / sig2[ke]
        )
        bvec = (
            (inputs.wt.scores[idx] - state.u_block.means[ku]) @ prec_u[ku]
            + (inputs.mt.scores[idx] - state.w_block.means[kw]) @ prec_w[kw]
            + state.x_block.means[kx] @ prec_x[kx]
            + np.outer(y_res[idx], gamma) / sig2[ke]
        )
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(
                "latent-score conditional precision is not SPD"
            ) from exc
        mean = cho_solve((L, True), bvec.T).T
        new_xt[idx] = mean + solve_triangular(L.T, noise[idx].T, lower=False).T
    return new_xt


def _update_regression(
    state: McmcState, inputs: ModelInputs, config: McmcConfig, rng: np.random.Generator
) -> tuple[float, np.ndarray, np.ndarray]:
    """Joint conditional MVN draw of (alpha0, beta_z, gamma)."""
    n, p = inputs.n, inputs.p
    K = inputs.basis.K
    ze = state.eps_block.allocations
    lam = 1.0 / state.eps_block.variances[ze]
    ytil = inputs.y - state.eps_block.means[ze]

    n_fixed = (1 if config.fit_intercept else 0) + p
    cols = ([np.ones((n, 1))] if config.fit_intercept else []) + [inputs.z, state.xtilde]
    C = np.column_stack(cols)
    q = n_fixed + K
    A = C.T @ (C * lam[:, None])
    A[n_fixed:, n_fixed:] += inputs.basis.penalty / state.tau
    b = C.T @ (lam * ytil)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("regression conditional precision is not SPD") from exc
    mean = cho_solve((L, True), b)
    theta = mean + solve_triangular(L.T, rng.standard_normal(q), lower=False)
    if config.fit_intercept:
        return float(theta[0]), theta[1 : 1 + p], theta[1 + p :]
    return 0.0, theta[:p], theta[p:]


def sweep(
    state: McmcState,
    inputs: ModelInputs,
    config: McmcConfig,
    rng: np.random.Generator,
    clamp_x: bool = False,
) -> McmcState:
    """One full Gibbs sweep in fixed update order.

    With clamp_x the latent scores stay pinned to the observed-curve scores
    and the measurement-error blocks are skipped (the naive comparator).
    """
    # (1) scalar error block; recentering shift absorbed into the intercept
    r = inputs.y - state.alpha0 - inputs.z @ state.beta_z - state.xtilde @ state.gamma
    eps_block, shift = gibbs_update_scalar_mixture(state.eps_block, r, rng)
    state = replace_state(
        state,
        eps_block=eps_block,
        alpha0=state.alpha0 + shift if config.fit_intercept else 0.0,
    )

    if not clamp_x:
        # (2)-(3) measurement-error blocks, zero-mean enforced
        u_block, _ = gibbs_update_mv_mixture(
            state.u_block, inputs.wt.scores - state.xtilde, rng, enforce_zero_mean=True
        )
        w_block, _ = gibbs_update_mv_mixture(
            state.w_block, inputs.mt.scores - state.xtilde, rng, enforce_zero_mean=True
        )
        # (4) latent-score mixture, unconstrained means
        x_block, _ = gibbs_update_mv_mixture(
            state.x_block, state.xtilde, rng, enforce_zero_mean=False
        )
        state = replace_state(state, u_block=u_block, w_block=w_block, x_block=x_block)
        # (5) latent scores
        state = replace_state(state, xtilde=_update_latent_scores(state, inputs, rng))

    # (6) joint regression coefficients
    alpha0, beta_z, gamma = _update_regression(state, inputs, config, rng)
    state = replace_state(state, alpha0=alpha0, beta_z=beta_z, gamma=gamma)

    # (7) smoothing variance; the penalty has rank K-2
    K = inputs.basis.K
    rate = config.b_tau + 0.5 * float(gamma @ inputs.basis.penalty @ gamma)
    tau = sample_inverse_gamma(rng, config.a_tau + (K - 2) / 2.0, rate)
    state = replace_state(state, tau=tau)

    if config.check_invariants:
        check_state_invariants(state)
    return state


def replace_state(state: McmcState, **kwargs) -> McmcState:
    out = McmcState(**{**state.__dict__, **kwargs})
    return out


def check_state_invariants(state: McmcState) -> None:
    assert state.tau > 0
    assert abs(state.eps_block.weights.sum() - 1) < 1e-9
    assert abs(state.eps_block.mixture_mean()) < 1e-8
    assert np.all(state.eps_block.variances > 0)
    for blk in (state.u_block, state.w_block):
        assert np.max(np.abs(blk.mixture_mean())) < 1e-8
    for blk in (state.u_block, state.w_block, state.x_block):
        for c in blk.covariances:
            np.linalg.cholesky(c)
    assert np.all(np.isfinite(state.xtilde))


# --- chain driver ----------------------------------------------------------------

def run_chain(
    inputs: ModelInputs,
    config: McmcConfig,
    rng: np.random.Generator | None = None,
    stream: int = 0,
    clamp_x: bool = False,
) -> PosteriorDraws:
    """Initialize, sweep n_iter times, retain post-burn-in thinned states."""
    if rng is None:
        rng = make_rng(config.seed, stream)
    state = initialize(inputs, config, rng, clamp_x=clamp_x)

    d = config.draw_count
    n, K, p = inputs.n, inputs.basis.K, inputs.p
    iterations = np.empty(d, dtype=np.int64)
    alpha0 = np.empty(d)
    beta_z = np.empty((d, p))
    gamma = np.empty((d, K))
    tau = np.empty(d)
    x_alloc = np.empty((d, n), dtype=np.int32)
    xt_iters: list[int] = []
    xt_snaps: list[np.ndarray] = []

    j = 0
    snap_every = config.thin * config.xtilde_stride
    for it in range(1, config.n_iter + 1):
        try:
            state = sweep(state, inputs, config, rng, clamp_x=clamp_x)
        except NumericalFailure as exc:
            raise NumericalFailure(f"sweep failed at iteration {it}: {exc}") from exc
        k = it - config.burn_in
        if k > 0 and k % config.thin == 0 and j < d:
            iterations[j] = it
            alpha0[j] = state.alpha0
            beta_z[j] = state.beta_z
            gamma[j] = state.gamma
            tau[j] = state.tau
            x_alloc[j] = state.x_block.allocations
            if config.store_xtilde and k % snap_every == 0:
                xt_iters.append(it)
                xt_snaps.append(state.xtilde.copy())
            j += 1

    return PosteriorDraws(
        iterations=iterations[:j],
        alpha0=alpha0[:j],
        beta_z=beta_z[:j],
        gamma=gamma[:j],
        tau=tau[:j],
        x_allocations=x_alloc[:j],
        xtilde_iterations=np.asarray(xt_iters, dtype=np.int64) if config.store_xtilde else None,
        xtilde=np.asarray(xt_snaps) if config.store_xtilde and xt_snaps else (
            np.empty((0, n, K)) if config.store_xtilde else None
        ),
    )


def run_chains(inputs: ModelInputs, config: McmcConfig, clamp_x: bool = False) -> PosteriorDraws:
    """Run config.n_chains chains on independent streams and merge in order."""
    parts = [
        run_chain(inputs, config, stream=c, clamp_x=clamp_x)
        for c in range(config.n_chains)
    ]
    return merge_draws(parts)


def fit_naive(
    inputs: ModelInputs,
    config: McmcConfig,
    rng: np.random.Generator | None = None,
    stream: int = 0,
) -> PosteriorDraws:
    """Comparator fit with latent scores clamped to the observed-curve scores."""
    return run_chain(inputs, config, rng=rng, stream=stream, clamp_x=True)
