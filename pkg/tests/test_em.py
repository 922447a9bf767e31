import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gammarank.em import (
    EstimationConfig,
    em_fit,
    estimate_alpha,
    estimate_shared_params,
    hessian_quadratic_form,
    log_marginal,
    refit_shared_params,
)
from gammarank.errors import InputError, NumericalError
from gammarank.model import SharedParams, log_density_matrix
from gammarank.simulator import SimulationConfig, simulate
from gammarank.structures import ExperimentLayout, enumerate_ordered_structures

P = SharedParams(10, 3, 32.0)


def simulated(p, m, G, weights=None, params=P, seed=0, include_null=True):
    layout = ExperimentLayout.balanced(p, m)
    cat = enumerate_ordered_structures(p, include_null)
    w = np.full(len(cat), 1 / len(cat)) if weights is None else np.asarray(weights)
    res = simulate(SimulationConfig(layout, params, cat, w, G, seed))
    return layout, cat, res


@pytest.fixture(scope="module")
def p3():
    layout, cat, res = simulated(3, 3, 3000, seed=11)
    return log_density_matrix(res.data, cat, layout, P), res


def test_single_structure():
    L = np.random.default_rng(0).normal(-5, 2, size=(40, 1))
    fit = em_fit(L)
    assert fit.weights.tolist() == [1.0]
    assert fit.loglik == pytest.approx(L.sum())
    assert np.all(fit.posterior == 1.0)


def test_monotone_and_fixed_point(p3):
    L, _ = p3
    # run until the log likelihood stops changing in floating point
    fit = em_fit(L, max_iters=20000, rel_tol=0.0)
    assert fit.converged
    assert np.all(np.diff(fit.loglik_trace) >= -1e-9)
    np.testing.assert_allclose(fit.posterior.sum(axis=1), 1.0, atol=1e-10)
    assert fit.weights.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(fit.weights, fit.posterior.mean(axis=0), atol=1e-8)


def test_random_inits_agree(p3):
    L, _ = p3
    fits = [em_fit(L, init="random", seed=s, max_iters=20000, rel_tol=1e-15) for s in range(3)]
    fits.append(em_fit(L, max_iters=20000, rel_tol=1e-15))
    for f in fits[1:]:
        np.testing.assert_allclose(f.weights, fits[0].weights, atol=1e-6)


def test_recovery_p2():
    w = [0.2, 0.5, 0.3]
    layout, cat, res = simulated(2, 3, 5000, weights=w, seed=5)
    assert [str(e) for e in cat] == ["(12)", "(1)(2)", "(2)(1)"]
    fit = em_fit(log_density_matrix(res.data, cat, layout, P), max_iters=2000, rel_tol=1e-12)
    assert np.max(np.abs(fit.weights - w)) <= 0.03


def test_explicit_init_and_errors():
    L = np.log(np.random.default_rng(1).uniform(0.1, 1, size=(10, 3)))
    fit = em_fit(L, init=[0.2, 0.3, 0.5], max_iters=1)
    assert fit.iterations == 1 and len(fit.loglik_trace) == 2
    with pytest.raises(InputError):
        em_fit(L, init=[0.5, 0.5])
    with pytest.raises(InputError):
        em_fit(L, init="zeros")
    with pytest.raises(InputError):
        em_fit(np.zeros((0, 3)))
    with pytest.raises(InputError):
        em_fit(np.zeros((3, 0)))
    bad = L.copy()
    bad[0, 0] = -np.inf
    with pytest.raises(NumericalError):
        em_fit(bad)


def test_log_marginal_cases():
    assert log_marginal(np.array([-3.5]), [1.0]) == -3.5
    assert log_marginal(np.full(4, -2.25), np.full(4, 0.25)) == pytest.approx(-2.25, abs=1e-15)
    rng = np.random.default_rng(3)
    for _ in range(20):
        L = rng.normal(-400, 50, size=7)
        pi = rng.dirichlet(np.ones(7))
        with mpmath.workdps(60):
            exact = mpmath.log(sum(mpmath.mpf(p) * mpmath.exp(mpmath.mpf(l)) for p, l in zip(pi, L)))
        assert log_marginal(L, pi) == pytest.approx(float(exact), rel=1e-12)


def test_posterior_rows_sum_to_one(p3):
    L, _ = p3
    pi = np.random.default_rng(4).dirichlet(np.ones(L.shape[1]))
    post = np.exp(L + np.log(pi) - log_marginal(L, pi)[:, None])
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)


def hessian_fd(L, pi, a, ref=-1):
    # second directional derivative of -l along the simplex direction a
    C = L.shape[1]
    ref %= C
    d = np.zeros(C)
    d[np.arange(C) != ref] = a
    d[ref] = -a.sum()
    h = 1e-4 * min(pi.min(), 1e-2) / max(1.0, np.abs(d).max())

    def nll(t):
        return -log_marginal(L, pi + t * d).sum()

    return (nll(h) - 2 * nll(0.0) + nll(-h)) / h**2


def test_hessian_basic(p3):
    L, _ = p3
    C = L.shape[1]
    rng = np.random.default_rng(8)
    pi = rng.dirichlet(np.ones(C))
    assert hessian_quadratic_form(L, pi, np.zeros(C - 1)) == 0.0
    a = rng.normal(size=C - 1)
    q = hessian_quadratic_form(L, pi, a)
    assert q > 0
    assert q == pytest.approx(hessian_fd(L, pi, a), rel=1e-4)


def test_hessian_bilinear_and_reference(p3):
    L, _ = p3
    C = L.shape[1]
    rng = np.random.default_rng(9)
    pi = rng.dirichlet(np.ones(C))
    for _ in range(20):
        a, b = rng.normal(size=(2, C - 1))
        qa, qb = hessian_quadratic_form(L, pi, a), hessian_quadratic_form(L, pi, b)
        qs, qd = hessian_quadratic_form(L, pi, a + b), hessian_quadratic_form(L, pi, a - b)
        # parallelogram law holds exactly for a quadratic form
        assert qs + qd == pytest.approx(2 * qa + 2 * qb, rel=1e-8)
        assert hessian_quadratic_form(L, pi, 3 * a) == pytest.approx(9 * qa, rel=1e-10)
        # the same simplex direction expressed against a different reference
        d = np.append(a, -a.sum())
        assert hessian_quadratic_form(L, pi, d[1:], reference=0) == pytest.approx(qa, rel=1e-9)


@given(st.integers(2, 6), st.integers(1, 30), st.integers(0, 10**6))
def test_hessian_nonnegative(C, G, seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(0, 3, size=(G, C))
    pi = rng.dirichlet(np.ones(C)) + 1e-9
    pi /= pi.sum()
    assert hessian_quadratic_form(L, pi, rng.normal(size=C - 1)) >= 0.0


def test_hessian_errors():
    L = np.zeros((5, 3))
    with pytest.raises(InputError):
        hessian_quadratic_form(L, [0.5, 0.5, 0.0], np.ones(2))
    with pytest.raises(InputError):
        hessian_quadratic_form(L, [0.2, 0.3, 0.5], np.ones(3))


def test_estimate_alpha_constant_cv():
    layout = ExperimentLayout.balanced(2, 8)
    rng = np.random.default_rng(12)
    means = rng.uniform(1, 1000, size=(10_000, 1))
    X = rng.gamma(25, means / 25, size=(10_000, 16))
    raw, _ = estimate_alpha(X, layout)
    assert round(raw) == 25


def test_estimate_alpha_needs_replicates():
    with pytest.raises(InputError):
        estimate_alpha(np.ones((5, 2)), ExperimentLayout((1, 2)))


@pytest.mark.slow
def test_estimate_shared_params_recovers_simulation():
    layout, cat, res = simulated(3, 4, 2000, seed=21)
    est = estimate_shared_params(res.data, layout)
    assert 8 <= est.params.alpha <= 12
    assert 2 <= est.params.alpha0 <= 5
    assert set(est.profile) == set(range(1, 21))
    assert est.profile[est.best_alpha0] == max(est.profile.values())
    assert 0.5 * 32 < est.params.nu0 < 2 * 32


def test_estimate_config_grid():
    layout, cat, res = simulated(2, 3, 300, seed=2)
    est = estimate_shared_params(res.data, layout, EstimationConfig(alpha0_grid=(2, 3, 4), em_iters=5))
    assert set(est.profile) == {2, 3, 4}
    with pytest.raises(InputError):
        estimate_shared_params(np.zeros((3, 6)), layout)


def test_refit_moves_towards_truth():
    layout, cat, res = simulated(2, 3, 1500, seed=4)
    params, fit = refit_shared_params(res.data, layout, cat, SharedParams(8, 5, 32.0), cycles=10, em_iters=50)
    assert abs(params.alpha - 10) <= 1
    assert abs(params.alpha0 - 3) <= 1
    assert fit.weights.shape == (3,)
