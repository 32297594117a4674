from __future__ import annotations

import numpy as np
import pytest

from sofri.errors import (
    DimensionMismatch,
    EmptyResiduals,
    InvalidDegreesOfFreedom,
    NonPositiveConcentration,
    NonSpdScale,
)
from sofri.mixtures import (
    MvMixtureBlock,
    NIGParams,
    NIWParams,
    ScalarMixtureBlock,
    _nig_posterior,
    _niw_posterior,
    gibbs_update_mv_mixture,
    gibbs_update_scalar_mixture,
    log_density_mixture,
    mv_mixture_logpdf,
    sample_dirichlet,
    sample_inverse_wishart,
    scalar_mixture_logpdf,
)
from sofri.rng import make_rng


def test_dirichlet_concentration_limit():
    rng = make_rng(0)
    w = sample_dirichlet(rng, [1e9, 1e9])
    assert np.allclose(w, [0.5, 0.5], atol=1e-3)


def test_dirichlet_degenerate_simplex():
    rng = make_rng(1)
    assert np.array_equal(sample_dirichlet(rng, [2.0]), [1.0])


def test_dirichlet_monte_carlo_mean():
    rng = make_rng(2)
    draws = np.vstack([sample_dirichlet(rng, [2.0, 2.0, 2.0]) for _ in range(100_000)])
    assert np.allclose(draws.mean(axis=0), 1.0 / 3.0, atol=0.01)


def test_dirichlet_rejects_nonpositive():
    rng = make_rng(3)
    with pytest.raises(NonPositiveConcentration):
        sample_dirichlet(rng, [1.0, 0.0])


def test_inverse_wishart_dim1_mean():
    rng = make_rng(4)
    draws = np.array(
        [sample_inverse_wishart(rng, 6.0, np.array([[4.0]]))[0, 0] for _ in range(100_000)]
    )
    assert draws.mean() == pytest.approx(1.0, abs=0.02)


def test_inverse_wishart_spd_output():
    rng = make_rng(5)
    psi = np.array([[2.0, 0.3], [0.3, 1.0]])
    for _ in range(2000):
        np.linalg.cholesky(sample_inverse_wishart(rng, 5.0, psi))


def test_inverse_wishart_df_boundary():
    rng = make_rng(6)
    with pytest.raises(InvalidDegreesOfFreedom):
        sample_inverse_wishart(rng, 1.5, np.eye(2))


def test_inverse_wishart_non_spd_scale():
    rng = make_rng(7)
    with pytest.raises(NonSpdScale):
        sample_inverse_wishart(rng, 5.0, np.array([[1.0, 2.0], [2.0, 1.0]]))


def _scalar_block(weights, means, variances, n=4, conc=1.0):
    return ScalarMixtureBlock(
        weights=np.asarray(weights, dtype=float),
        means=np.asarray(means, dtype=float),
        variances=np.asarray(variances, dtype=float),
        allocations=np.zeros(n, dtype=int),
        concentration=conc,
        prior=NIGParams(),
    )


def test_scalar_logpdf_standard_normal():
    block = _scalar_block([1.0], [0.0], [1.0])
    assert scalar_mixture_logpdf(block, 0.0) == pytest.approx(-0.9189385, abs=1e-6)


def test_identical_components_collapse():
    one = _scalar_block([1.0], [0.3], [2.0])
    two = _scalar_block([0.5, 0.5], [0.3, 0.3], [2.0, 2.0])
    x = np.array([-1.0, 0.0, 0.7, 3.2])
    assert np.allclose(scalar_mixture_logpdf(one, x), scalar_mixture_logpdf(two, x))


def test_scalar_logpdf_matches_direct_sum():
    block = _scalar_block([0.2, 0.5, 0.3], [-1.0, 0.0, 2.0], [0.5, 1.0, 2.0])
    xs = np.array([-2.0, -0.5, 0.0, 1.0, 3.0])
    direct = np.log(
        sum(
            w * np.exp(-0.5 * (xs - m) ** 2 / v) / np.sqrt(2 * np.pi * v)
            for w, m, v in zip(block.weights, block.means, block.variances)
        )
    )
    assert np.allclose(scalar_mixture_logpdf(block, xs), direct, atol=1e-12)


def test_mv_logpdf_matches_scalar_in_dim1():
    sb = _scalar_block([0.4, 0.6], [-1.0, 1.0], [1.0, 3.0])
    mb = MvMixtureBlock(
        weights=sb.weights,
        means=sb.means[:, None],
        covariances=sb.variances[:, None, None],
        allocations=sb.allocations,
        concentration=1.0,
        prior=NIWParams(mu0=np.zeros(1), k0=0.01, nu0=3.0, psi0=np.eye(1)),
    )
    xs = np.array([-0.3, 0.0, 2.0])
    assert np.allclose(
        scalar_mixture_logpdf(sb, xs), mv_mixture_logpdf(mb, xs[:, None]), atol=1e-10
    )
    assert log_density_mixture(sb, 0.5) == pytest.approx(
        float(mv_mixture_logpdf(mb, np.array([0.5])))
    )


def test_scalar_update_recenters():
    rng = make_rng(8)
    block = _scalar_block([0.5, 0.5], [1.0, -1.0], [1.0, 1.0], n=50)
    r = rng.standard_normal(50) + 2.0
    new, shift = gibbs_update_scalar_mixture(block, r, rng)
    assert abs(new.mixture_mean()) < 1e-10
    assert np.isfinite(shift)


def test_scalar_update_empty_residuals():
    rng = make_rng(9)
    block = _scalar_block([1.0], [0.0], [1.0], n=0)
    with pytest.raises(EmptyResiduals):
        gibbs_update_scalar_mixture(block, np.array([]), rng)


def test_scalar_single_component_matches_nig_posterior():
    # with one component the sweep is a pure conjugate update; compare the
    # Monte Carlo mean of mu against the closed-form posterior mean
    rng = make_rng(10)
    r = make_rng(11).standard_normal(40) * 0.7 + 1.3
    prior = NIGParams(m0=0.0, k0=0.01, a0=1.0, b0=1.0)
    block = ScalarMixtureBlock(
        weights=np.array([1.0]),
        means=np.array([0.0]),
        variances=np.array([1.0]),
        allocations=np.zeros(40, dtype=int),
        concentration=1.0,
        prior=prior,
    )
    mus = []
    for _ in range(100_000):
        new, shift = gibbs_update_scalar_mixture(block, r, rng, recenter=False)
        mus.append(new.means[0])
    post = _nig_posterior(prior, r)
    assert np.mean(mus) == pytest.approx(post.m0, abs=0.01)


def test_mv_single_component_matches_niw_posterior():
    rng = make_rng(12)
    x = make_rng(13).standard_normal((60, 2)) @ np.array([[1.0, 0.0], [0.4, 0.8]]) + [0.5, -1.0]
    prior = NIWParams(mu0=np.zeros(2), k0=0.01, nu0=4.0, psi0=np.eye(2))
    block = MvMixtureBlock(
        weights=np.array([1.0]),
        means=np.zeros((1, 2)),
        covariances=np.eye(2)[None, :, :],
        allocations=np.zeros(60, dtype=int),
        concentration=1.0,
        prior=prior,
    )
    mus = np.zeros(2)
    n_draws = 20_000
    for _ in range(n_draws):
        new, shift = gibbs_update_mv_mixture(block, x, rng, enforce_zero_mean=False)
        mus += new.means[0]
    post = _niw_posterior(prior, x)
    assert np.allclose(mus / n_draws, post.mu0, atol=0.02)


def test_mv_update_zero_mean_enforced():
    rng = make_rng(14)
    x = rng.standard_normal((80, 3)) + 1.5
    prior = NIWParams(mu0=np.zeros(3), k0=0.01, nu0=5.0, psi0=np.eye(3))
    block = MvMixtureBlock(
        weights=np.full(2, 0.5),
        means=np.zeros((2, 3)),
        covariances=np.tile(np.eye(3), (2, 1, 1)),
        allocations=np.zeros(80, dtype=int),
        concentration=1.0,
        prior=prior,
    )
    new, _ = gibbs_update_mv_mixture(block, x, rng, enforce_zero_mean=True)
    assert np.max(np.abs(new.mixture_mean())) < 1e-10


def test_mv_update_dimension_mismatch():
    rng = make_rng(15)
    prior = NIWParams(mu0=np.zeros(3), k0=0.01, nu0=5.0, psi0=np.eye(3))
    block = MvMixtureBlock(
        weights=np.array([1.0]),
        means=np.zeros((1, 3)),
        covariances=np.eye(3)[None, :, :],
        allocations=np.zeros(5, dtype=int),
        concentration=1.0,
        prior=prior,
    )
    with pytest.raises(DimensionMismatch):
        gibbs_update_mv_mixture(block, np.zeros((5, 2)), rng, enforce_zero_mean=False)


def test_empty_component_draws_from_prior():
    # residuals far from zero force everything into one component; the other
    # component's parameters are then prior draws, whose mean over sweeps
    # matches the NIG prior mean of mu (m0 = 0)
    rng = make_rng(16)
    r = make_rng(17).standard_normal(30) + 50.0
    prior = NIGParams(m0=0.0, k0=1.0, a0=3.0, b0=1.0)
    block = ScalarMixtureBlock(
        weights=np.array([0.99, 0.01]),
        means=np.array([50.0, 0.0]),
        variances=np.array([1.0, 1.0]),
        allocations=np.zeros(30, dtype=int),
        concentration=1.0,
        prior=prior,
    )
    empties = []
    for _ in range(20_000):
        new, _ = gibbs_update_scalar_mixture(block, r, rng, recenter=False)
        counts = np.bincount(new.allocations, minlength=2)
        if counts[1] == 0:
            empties.append(new.means[1])
    assert len(empties) > 1000
    assert np.mean(empties) == pytest.approx(0.0, abs=0.05)


def test_reproducibility_same_seed():
    r = make_rng(18).standard_normal(25)
    block = _scalar_block([0.5, 0.5], [-0.5, 0.5], [1.0, 1.0], n=25)
    a, _ = gibbs_update_scalar_mixture(block, r, make_rng(42))
    b, _ = gibbs_update_scalar_mixture(block, r, make_rng(42))
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.allocations, b.allocations)
