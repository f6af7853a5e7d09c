import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mimoest.errors import RankDeficient
from mimoest.estimators import (LmmseContext, analytic_mse, empirical_mse, lmmse_estimate,
                                lmmse_matrices, ls_matrix, ls_preprocess, mse_derivation_chain,
                                phi_coefficients, sum_mse_per_sample)
from mimoest.numerics import RngStream, herm
from mimoest.pilots import orthogonal_pilots, random_pilots
from mimoest.scenario import sample_channels, sample_received


def _context(gen, L=3, tau=4, K=3, delta=0.1, noise=0.5, unit=False):
    beta = gen.uniform(0.05, 1.0, (L, L, K))
    if unit:
        X = orthogonal_pilots(tau, K, L, gen, 1.0).X
    else:
        X = random_pilots(tau, K, L, gen, 1.0).X
    p = gen.uniform(0.3, 1.0, (L, K))
    phi = phi_coefficients(beta, p, np.full((L, K), delta), np.full(L, delta), noise, tau)
    return LmmseContext(X, p, beta, phi)


def test_phi_example():
    phi = phi_coefficients(np.ones((1, 1, 1)), np.ones((1, 1)), np.full((1, 1), 0.1),
                           np.full(1, 0.1), 1.0, 2)
    assert phi[0] == pytest.approx(0.515)


def test_phi_single_cell_no_distortion():
    phi = phi_coefficients(np.ones((1, 1, 3)), np.ones((1, 3)), np.zeros((1, 3)), np.zeros(1),
                           0.7, 5)
    assert phi[0] == pytest.approx(0.7 / 5)


def test_lmmse_single_cell_scalar_reduction():
    tau, K, sigma2 = 4, 2, 0.3
    X = orthogonal_pilots(tau, K, 1, RngStream(0), 1.0).X
    p = np.array([[0.5, 2.0]])
    beta = np.array([[[0.8, 0.1]]])
    ctx = LmmseContext(X, p, beta, np.array([sigma2 / tau]))
    A = lmmse_matrices(ctx)[0]
    coef = np.sqrt(p[0]) * beta[0, 0] / (p[0] * beta[0, 0] + sigma2 / tau) / math.sqrt(tau)
    np.testing.assert_allclose(A, X[0] * coef, atol=1e-12)


def test_lmmse_vanishes_with_huge_phi():
    ctx = _context(np.random.default_rng(0))
    ctx.phi = ctx.phi * 1e12
    assert np.max(np.abs(lmmse_matrices(ctx))) < 1e-9


def test_scalar_wiener():
    ctx = LmmseContext(np.ones((1, 1, 1)), np.array([[2.0]]), np.array([[[0.5]]]), np.array([0.25]))
    A = lmmse_matrices(ctx)[0, 0, 0]
    assert A == pytest.approx(math.sqrt(2.0) * 0.5 / (2.0 * 0.5 + 0.25))


def test_lmmse_estimate_shapes_and_errors():
    gen = np.random.default_rng(1)
    Y = gen.standard_normal((3, 5, 4)) + 0j
    A = gen.standard_normal((3, 4, 2)) + 1j * gen.standard_normal((3, 4, 2))
    np.testing.assert_allclose(lmmse_estimate(Y, A), np.einsum("bnt,btk->bnk", Y, A))
    assert not np.any(lmmse_estimate(np.zeros((5, 4)), A[0]))
    with pytest.raises(ValueError):
        lmmse_estimate(Y, A[:, :3])


def test_ls_noise_free_inversion():
    gen = np.random.default_rng(2)
    xbar = random_pilots(5, 3, 1, gen, 2.0).merged()[0]
    H = gen.standard_normal((4, 3)) + 1j * gen.standard_normal((4, 3))
    Y = math.sqrt(5) * H @ herm(xbar)
    np.testing.assert_allclose(ls_preprocess(Y, xbar), H, atol=1e-12)


def test_ls_rank_deficient():
    x = np.ones((4, 2), dtype=complex)
    with pytest.raises(RankDeficient):
        ls_matrix(x)
    with pytest.raises(RankDeficient):
        ls_matrix(np.ones((2, 3), dtype=complex))


def test_ls_monte_carlo_mse():
    # N=2, K=1, tau=4, P=1, sigma2=1: E||Yhat - H||^2 = N K sigma2 / (tau P) = 0.5
    pil = orthogonal_pilots(4, 1, 1, RngStream(0), 1.0).merged()
    H = sample_channels(np.ones((1, 1, 1)), 2, RngStream(1, "h"), batch=10_000)
    block = sample_received(RngStream(2, "rx"), H, pil, 0.0, 0.0, 1.0)
    err = empirical_mse(ls_preprocess(block.Y[:, 0], pil[0]), H[:, 0, 0])
    assert err == pytest.approx(0.5, rel=0.03)


def test_single_cell_closed_form():
    # N=2, K=1, beta=1, tau P / sigma2 = 9 -> 2 * 1/(1 + 9) = 0.2
    ctx = LmmseContext(orthogonal_pilots(9, 1, 1, RngStream(0), 1.0).X, np.ones((1, 1)),
                       np.ones((1, 1, 1)), np.array([1.0 / 9]))
    assert analytic_mse(ctx, 2)[0] == pytest.approx(0.2, abs=1e-10)


@pytest.mark.parametrize("K", [1, 3])
def test_single_cell_closed_form_general(K):
    gen = np.random.default_rng(K)
    tau, N, sigma2 = 4, 3, 0.4
    beta = gen.uniform(0.1, 1.0, (1, 1, K))
    p = gen.uniform(0.5, 2.0, (1, K))
    ctx = LmmseContext(orthogonal_pilots(tau, K, 1, gen, 1.0).X, p, beta, np.array([sigma2 / tau]))
    expect = N * np.sum(beta[0, 0] * sigma2 / (sigma2 + tau * p[0] * beta[0, 0]))
    assert analytic_mse(ctx, N)[0] == pytest.approx(expect, abs=1e-10)


def test_zero_pilots_give_prior_power():
    gen = np.random.default_rng(3)
    ctx = _context(gen)
    ctx.X = np.zeros_like(ctx.X)
    np.testing.assert_allclose(analytic_mse(ctx, 5), 5 * ctx.local_beta().sum(-1), rtol=1e-12)


def test_derivation_chain_agrees():
    gen = np.random.default_rng(4)
    for _ in range(100):
        ctx = _context(gen, L=int(gen.integers(1, 4)), tau=int(gen.integers(2, 6)),
                       K=int(gen.integers(1, 5)), delta=gen.uniform(0, 0.2))
        forms = mse_derivation_chain(ctx, 4)
        ref = analytic_mse(ctx, 4)
        for v in forms.values():
            np.testing.assert_allclose(v, ref, atol=1e-10)


@given(st.integers(0, 2**31))
def test_mse_bounded_by_prior(seed):
    ctx = _context(np.random.default_rng(seed))
    mse = analytic_mse(ctx, 2)
    assert np.all(mse > 0)
    assert np.all(mse <= 2 * ctx.local_beta().sum(-1) * (1 + 1e-12))


def test_lmmse_monte_carlo_matches_analytic():
    gen = np.random.default_rng(5)
    L, K, N, tau, delta, noise = 2, 2, 4, 3, 0.15, 0.2
    beta = gen.uniform(0.2, 1.0, (L, L, K))
    pil = random_pilots(tau, K, L, gen, 1.0)
    H = sample_channels(beta, N, RngStream(6, "h"), batch=10_000)
    block = sample_received(RngStream(7, "rx"), H, pil.merged(), delta, delta, noise)
    phi = phi_coefficients(beta, pil.p, np.full((L, K), delta), np.full(L, delta), noise, tau)
    ctx = LmmseContext(pil.X, pil.p, beta, phi)
    H_hat = block.Y @ lmmse_matrices(ctx)
    idx = np.arange(L)
    for i in range(L):
        emp = empirical_mse(H_hat[:, i], H[:, i, i])
        assert emp == pytest.approx(analytic_mse(ctx, N)[i], rel=0.02)


def test_empirical_mse_examples():
    gen = np.random.default_rng(6)
    H = gen.standard_normal((10, 3, 2)) + 1j * gen.standard_normal((10, 3, 2))
    assert empirical_mse(H, H) == 0.0
    assert empirical_mse(np.zeros_like(H), H) == pytest.approx(np.mean(np.sum(np.abs(H) ** 2, (1, 2))))
    with pytest.raises(ValueError):
        empirical_mse(H[:, :2], H)
    per = sum_mse_per_sample(np.zeros((4, 2, 3, 2)), np.ones((4, 2, 3, 2)))
    np.testing.assert_allclose(per, 12.0)
