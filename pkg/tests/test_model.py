from __future__ import annotations

import numpy as np
import pytest

from sofri.errors import RankDeficientZ
from sofri.fda import FunctionalDataset, build_bspline_basis, build_grid, project
from sofri.mixtures import (
    MvMixtureBlock,
    NIGParams,
    NIWParams,
    ScalarMixtureBlock,
)
from sofri.model import (
    McmcConfig,
    McmcState,
    ModelInputs,
    PosteriorDraws,
    _update_latent_scores,
    _update_regression,
    check_state_invariants,
    fit_naive,
    initialize,
    merge_draws,
    run_chain,
    sweep,
)
from sofri.rng import make_rng
from sofri.simulate import Scenario, simulate_dataset


def _toy_inputs(n=50, T=20, K=6, seed=0, p=1, equal_wm=False):
    rng = make_rng(seed)
    grid = build_grid(np.linspace(0.0, 1.0, T))
    basis = build_bspline_basis(grid, K=K)
    X = np.sin(2 * np.pi * grid.points) + rng.standard_normal((n, T))
    W = X + 0.5 * rng.standard_normal((n, T))
    M = W if equal_wm else X + 0.5 * rng.standard_normal((n, T))
    wt = project(FunctionalDataset(grid=grid, values=W), basis, source="W")
    mt = project(FunctionalDataset(grid=grid, values=M), basis, source="M*")
    z = rng.standard_normal((n, p)) if p else np.zeros((n, 0))
    w_quad = basis.quad_weights
    y = X @ (w_quad * (2 * grid.points)) + 0.3 * rng.standard_normal(n)
    if p:
        y = y + z @ np.full(p, 0.5)
    return ModelInputs(y=y, z=z, wt=wt, mt=mt, basis=basis)


def test_config_validation():
    with pytest.raises(ValueError):
        McmcConfig(n_iter=10, burn_in=10)
    with pytest.raises(ValueError):
        McmcConfig(n_iter=10, burn_in=2, thin=0)


def test_draw_count_thinning_convention():
    cfg = McmcConfig(n_iter=10, burn_in=2, thin=3)
    assert cfg.draw_count == 2


def test_retained_iterations():
    inputs = _toy_inputs(n=20, T=12, K=5)
    cfg = McmcConfig(n_iter=10, burn_in=2, thin=3, seed=1, store_xtilde=False)
    draws = run_chain(inputs, cfg)
    assert list(draws.iterations) == [5, 8]


def test_same_seed_identical_draws():
    inputs = _toy_inputs(n=20, T=12, K=5)
    cfg = McmcConfig(n_iter=30, burn_in=5, seed=7, store_xtilde=False)
    a = run_chain(inputs, cfg)
    b = run_chain(inputs, cfg)
    assert np.array_equal(a.gamma, b.gamma)
    assert np.array_equal(a.tau, b.tau)
    assert np.array_equal(a.x_allocations, b.x_allocations)


def test_initialize_without_covariates():
    inputs = _toy_inputs(n=40, T=15, K=5, p=0)
    cfg = McmcConfig(k_eps=1)
    state = initialize(inputs, cfg, make_rng(0))
    assert state.beta_z.shape == (0,)
    resid_mean = float(np.mean(inputs.y - state.xtilde @ state.gamma))
    assert state.alpha0 == pytest.approx(resid_mean, abs=1e-8)


def test_initialize_equal_scores():
    inputs = _toy_inputs(n=30, T=15, K=5, equal_wm=True)
    state = initialize(inputs, McmcConfig(), make_rng(0))
    assert np.array_equal(state.xtilde, inputs.wt.scores)


def test_initialize_no_intercept():
    inputs = _toy_inputs(n=40, T=15, K=5)
    state = initialize(inputs, McmcConfig(fit_intercept=False), make_rng(0))
    assert state.alpha0 == 0.0


def test_rank_deficient_z():
    inputs = _toy_inputs(n=30, T=15, K=5, p=1)
    z = np.column_stack([inputs.z, inputs.z])
    with pytest.raises(RankDeficientZ):
        ModelInputs(y=inputs.y, z=z, wt=inputs.wt, mt=inputs.mt, basis=inputs.basis)


def test_initialize_then_sweep_keeps_invariants():
    inputs = _toy_inputs(n=50, T=20, K=6)
    cfg = McmcConfig(check_invariants=True)
    rng = make_rng(3)
    state = initialize(inputs, cfg, rng)
    check_state_invariants(state)
    state = sweep(state, inputs, cfg, rng)
    check_state_invariants(state)


def test_no_intercept_sweep_keeps_alpha0_zero():
    inputs = _toy_inputs(n=40, T=15, K=5)
    cfg = McmcConfig(fit_intercept=False)
    rng = make_rng(4)
    state = initialize(inputs, cfg, rng)
    for _ in range(3):
        state = sweep(state, inputs, cfg, rng)
        assert state.alpha0 == 0.0


def _single_component_state(inputs, sigma2=0.25, tau=1.0):
    n, K = inputs.n, inputs.basis.K
    eps = ScalarMixtureBlock(
        weights=np.array([1.0]),
        means=np.array([0.0]),
        variances=np.array([sigma2]),
        allocations=np.zeros(n, dtype=int),
        concentration=1.0,
        prior=NIGParams(),
    )
    niw = NIWParams(mu0=np.zeros(K), k0=0.01, nu0=K + 2.0, psi0=np.eye(K))

    def mv(cov_scale):
        return MvMixtureBlock(
            weights=np.array([1.0]),
            means=np.zeros((1, K)),
            covariances=(cov_scale * np.eye(K))[None, :, :],
            allocations=np.zeros(n, dtype=int),
            concentration=1.0,
            prior=niw,
        )

    return McmcState(
        alpha0=0.0,
        beta_z=np.zeros(inputs.p),
        gamma=np.zeros(K),
        tau=tau,
        xtilde=0.5 * (inputs.wt.scores + inputs.mt.scores),
        eps_block=eps,
        u_block=mv(1.0),
        w_block=mv(1.0),
        x_block=mv(10.0),
    )


def test_regression_step_matches_ols_with_flat_smoothing():
    # single homoscedastic error component and tau -> infinity: the joint
    # conditional reduces to Bayesian linear regression with a flat prior,
    # whose mean is the OLS solution of Y on [1, Z, Xtilde]
    inputs = _toy_inputs(n=200, T=20, K=6, seed=5)
    state = _single_component_state(inputs, sigma2=0.25, tau=1e12)
    rng = make_rng(6)
    cfg = McmcConfig()
    draws = np.array(
        [np.concatenate([[a], b, g] ) for a, b, g in
         (_update_regression(state, inputs, cfg, rng) for _ in range(4000))]
    )
    C = np.column_stack([np.ones(inputs.n), inputs.z, state.xtilde])
    ols, *_ = np.linalg.lstsq(C, inputs.y, rcond=None)
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - ols) < 4 * se + 1e-6)


def test_latent_scores_degenerate_precision_limit():
    # tiny measurement-error covariances with equal score matrices pin the
    # latent scores to the observed scores
    inputs = _toy_inputs(n=30, T=15, K=5, equal_wm=True)
    state = _single_component_state(inputs)
    tiny = (1e-8 * np.eye(inputs.basis.K))[None, :, :]
    state.u_block = MvMixtureBlock(
        weights=state.u_block.weights, means=state.u_block.means,
        covariances=tiny, allocations=state.u_block.allocations,
        concentration=1.0, prior=state.u_block.prior,
    )
    state.w_block = MvMixtureBlock(
        weights=state.w_block.weights, means=state.w_block.means,
        covariances=tiny, allocations=state.w_block.allocations,
        concentration=1.0, prior=state.w_block.prior,
    )
    xt = _update_latent_scores(state, inputs, make_rng(7))
    assert np.max(np.abs(xt - inputs.wt.scores)) < 1e-3


def test_merge_draws_order():
    inputs = _toy_inputs(n=20, T=12, K=5)
    cfg = McmcConfig(n_iter=12, burn_in=2, thin=2, seed=9, store_xtilde=False)
    a = run_chain(inputs, cfg, stream=0)
    b = run_chain(inputs, cfg, stream=1)
    merged = merge_draws([a, b])
    assert merged.draw_count == a.draw_count + b.draw_count
    assert np.array_equal(merged.gamma[: a.draw_count], a.gamma)
    assert np.array_equal(merged.gamma[a.draw_count :], b.gamma)


def test_chain_exchangeability():
    # two seeds give posterior means of gamma within combined Monte Carlo error
    inputs = _toy_inputs(n=100, T=20, K=6, seed=11)
    cfg1 = McmcConfig(n_iter=800, burn_in=200, seed=1, store_xtilde=False)
    cfg2 = McmcConfig(n_iter=800, burn_in=200, seed=2, store_xtilde=False)
    a = run_chain(inputs, cfg1)
    b = run_chain(inputs, cfg2)
    ma, mb = a.gamma.mean(axis=0), b.gamma.mean(axis=0)
    # conservative MCSE: treat every 10th draw as independent
    sa = a.gamma[::10].std(axis=0) / np.sqrt(len(a.gamma[::10]))
    sb = b.gamma[::10].std(axis=0) / np.sqrt(len(b.gamma[::10]))
    assert np.all(np.abs(ma - mb) < 5 * (sa + sb) + 0.05)


def test_naive_equals_corrected_without_error():
    from sofri.delta import DeltaEstimate, scale_instrument
    from sofri.simulate import delta_function

    sc = Scenario(n=150, T=30, sigma_u=1e-6, sigma_w=1e-6, n_reps=1, seed=3,
                  true_beta="sine")
    Y, Z, W, M, _, _ = simulate_dataset(sc, 0)
    d_true = delta_function(W.grid.points, sc.delta_scale)
    d = DeltaEstimate(grid=W.grid, raw=d_true, smoothed=d_true, bandwidth=0.0)
    m_star = scale_instrument(M, d)
    basis = build_bspline_basis(W.grid, K=8)
    wt = project(W, basis, source="W")
    mt = project(m_star, basis, source="M*")
    inputs = ModelInputs(y=Y, z=Z, wt=wt, mt=mt, basis=basis)
    cfg = McmcConfig(n_iter=600, burn_in=200, seed=4, store_xtilde=False)
    corrected = run_chain(inputs, cfg).gamma.mean(axis=0)
    naive = fit_naive(inputs, cfg).gamma.mean(axis=0)
    curve_c = basis.basis_values @ corrected
    curve_n = basis.basis_values @ naive
    assert np.mean((curve_c - curve_n) ** 2) < 0.05 * max(np.mean(curve_n**2), 1e-6)


def test_tau_step_inverse_gamma_moments():
    # the smoothing-variance draw for a fixed coefficient vector follows
    # InvGamma(a + (K-2)/2, b + g'Pg/2); check both moments by Monte Carlo
    from sofri.mixtures import sample_inverse_gamma

    K = 8
    grid = build_grid(np.linspace(0.0, 1.0, 30))
    basis = build_bspline_basis(grid, K=K)
    gamma = make_rng(12).standard_normal(K)
    a_tau, b_tau = 2.0, 1.0
    shape = a_tau + (K - 2) / 2.0
    rate = b_tau + 0.5 * float(gamma @ basis.penalty @ gamma)
    rng = make_rng(13)
    draws = np.array([sample_inverse_gamma(rng, shape, rate) for _ in range(100_000)])
    mean = rate / (shape - 1.0)
    var = rate**2 / ((shape - 1.0) ** 2 * (shape - 2.0))
    se_mean = draws.std() / np.sqrt(len(draws))
    assert abs(draws.mean() - mean) < 4 * se_mean
    assert abs(draws.var() - var) < 0.05 * var


def test_posterior_contraction_band_coverage():
    # near-zero measurement error: the 90% band for beta(t) covers the truth
    # at most grid points in a single run
    from sofri.posterior import summarize_beta
    from sofri.simulate import true_beta_curve

    sc = Scenario(n=500, T=50, sigma_u=0.01, sigma_w=0.01, n_reps=1, seed=21,
                  true_beta="sine")
    Y, Z, W, M, _, beta = simulate_dataset(sc, 0)
    from sofri.delta import DeltaEstimate, scale_instrument
    from sofri.simulate import delta_function

    d_true = delta_function(W.grid.points, sc.delta_scale)
    d = DeltaEstimate(grid=W.grid, raw=d_true, smoothed=d_true, bandwidth=0.0)
    m_star = scale_instrument(M, d)
    basis = build_bspline_basis(W.grid, K=12)
    inputs = ModelInputs(
        y=Y, z=Z,
        wt=project(W, basis, source="W"),
        mt=project(m_star, basis, source="M*"),
        basis=basis,
    )
    cfg = McmcConfig(n_iter=800, burn_in=300, seed=22, store_xtilde=False)
    draws = run_chain(inputs, cfg)
    summ = summarize_beta(draws, basis, level=0.9)
    covered = np.mean((summ.lower <= beta) & (beta <= summ.upper))
    assert covered >= 0.8
