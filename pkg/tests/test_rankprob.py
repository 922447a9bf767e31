import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import betainc

from gammarank.errors import InputError
from gammarank.rankprob import (
    GammaRankProblem,
    gamma_rank_prob,
    gamma_rank_prob_batch,
    gamma_rank_prob_mc,
    log_gamma_rank_prob,
    log_gamma_rank_prob_batch,
    max_log_summand,
    nb_log_pmf_table,
    negbin_terms,
    poisson_embedding_check,
    summation_limits,
)

shapes_st = st.lists(st.integers(1, 6), min_size=2, max_size=4)


def problems(max_k=4, max_shape=6):
    return st.integers(2, max_k).flatmap(
        lambda k: st.tuples(
            st.lists(st.integers(1, max_shape), min_size=k, max_size=k),
            st.lists(st.floats(0.05, 20.0), min_size=k, max_size=k),
        )
    ).map(lambda t: GammaRankProblem(tuple(t[0]), tuple(t[1])))


def beta_oracle(a1, a2, l1, l2):
    # Z1 > Z2 iff B > l1 / (l1 + l2) with B ~ Beta(a1, a2)
    return betainc(a2, a1, l2 / (l1 + l2))


def brute_nested_sum(problem):
    # direct nested sum with scipy's negative binomial pmf
    a = problem.shapes
    terms = negbin_terms(problem)
    dists = [stats.nbinom(t.shape, t.success_prob) for t in terms]

    def rec(k, upper):
        if k == len(terms):
            return 1.0
        total = 0.0
        for m in range(upper):
            total += dists[k].pmf(m) * rec(k + 1, m + a[k + 1])
        return total

    return rec(0, a[0])


def quad_oracle(problem):
    # P(Z1 > Z2 > Z3) = int f2(z) P(Z1 > z) P(Z3 < z) dz
    (a1, a2, a3), (l1, l2, l3) = problem.shapes, problem.rates
    g1, g2, g3 = (stats.gamma(a, scale=1 / l) for a, l in zip((a1, a2, a3), (l1, l2, l3)))
    val, _ = integrate.quad(lambda z: g2.pdf(z) * g1.sf(z) * g3.cdf(z), 0, np.inf, epsabs=1e-14, epsrel=1e-12, limit=500)
    return val


def test_simple_values():
    assert gamma_rank_prob(GammaRankProblem((1, 1), (1.0, 2.0))) == pytest.approx(2 / 3, abs=1e-15)
    assert gamma_rank_prob(GammaRankProblem((5,), (1.0,))) == 1.0
    assert log_gamma_rank_prob(GammaRankProblem((5,), (1.0,))) == 0.0
    assert gamma_rank_prob(GammaRankProblem((2, 2, 2), (1.0, 1.0, 1.0))) == pytest.approx(1 / 6, abs=1e-14)


def test_beta_grid(rng):
    a = rng.integers(1, 51, size=(200, 2))
    ratio = 10 ** rng.uniform(-3, 3, size=200)
    worst = 0.0
    for (a1, a2), r in zip(a, ratio):
        got = gamma_rank_prob(GammaRankProblem((int(a1), int(a2)), (1.0, float(r))))
        worst = max(worst, abs(got - beta_oracle(a1, a2, 1.0, r)))
    assert worst < 1e-10


def test_beta_tail_in_log_space():
    # deep tail: compare logs against arbitrary precision
    a1, a2, l1, l2 = 40, 45, 1000.0, 1.0
    exact = mpmath.log(mpmath.betainc(a2, a1, 0, mpmath.mpf(l2) / (l1 + l2), regularized=True))
    got = log_gamma_rank_prob(GammaRankProblem((a1, a2), (l1, l2)))
    assert got == pytest.approx(float(exact), rel=1e-10)
    assert gamma_rank_prob(GammaRankProblem((a1, a2), (l1, l2))) < 1e-100


@pytest.mark.parametrize("K", range(2, 7))
@pytest.mark.parametrize("shape", [1, 3, 7])
def test_exchangeable(K, shape):
    prob = GammaRankProblem((shape,) * K, (2.5,) * K)
    assert gamma_rank_prob(prob) == pytest.approx(1 / math.factorial(K), abs=1e-12)


@given(problems(max_k=5, max_shape=5))
def test_permutation_completeness(prob):
    total = sum(gamma_rank_prob(prob.permuted(order)) for order in itertools.permutations(range(prob.K)))
    assert total == pytest.approx(1.0, abs=1e-10)


@given(problems(), st.floats(1e-3, 1e3))
def test_rate_scaling(prob, c):
    scaled = GammaRankProblem(prob.shapes, tuple(c * r for r in prob.rates))
    assert gamma_rank_prob(scaled) == pytest.approx(gamma_rank_prob(prob), abs=1e-12)


@given(problems(max_k=4, max_shape=5))
def test_matches_brute_force_sum(prob):
    assert gamma_rank_prob(prob) == pytest.approx(brute_nested_sum(prob), abs=1e-14)


@given(problems(max_k=3, max_shape=8).filter(lambda p: p.K == 3))
def test_matches_quadrature(prob):
    assert gamma_rank_prob(prob) == pytest.approx(quad_oracle(prob), abs=1e-9)


@given(problems(max_k=5, max_shape=20))
def test_log_and_linear_agree(prob):
    p = gamma_rank_prob(prob)
    lp = log_gamma_rank_prob(prob)
    assert lp <= 0.0
    if p > 1e-300:
        assert lp == pytest.approx(math.log(p), rel=1e-9, abs=1e-12)


def test_batch_matches_scalar(rng):
    shapes = (3, 1, 4, 2)
    rates = rng.uniform(0.1, 5, size=(20, 4))
    batch = gamma_rank_prob_batch(shapes, rates)
    lbatch = log_gamma_rank_prob_batch(shapes, rates)
    for r, b, lb in zip(rates, batch, lbatch):
        prob = GammaRankProblem(shapes, tuple(r))
        assert b == pytest.approx(gamma_rank_prob(prob), abs=1e-15)
        assert lb == pytest.approx(log_gamma_rank_prob(prob), abs=1e-13)


@given(problems(max_k=4, max_shape=6), st.integers(1, 6), st.floats(0.05, 20.0))
def test_adding_a_variable_cannot_raise_probability(prob, a, lam):
    longer = GammaRankProblem(prob.shapes + (a,), prob.rates + (lam,))
    assert gamma_rank_prob(longer) <= gamma_rank_prob(prob) + 1e-14


def test_summation_limits():
    assert summation_limits((3, 2, 4, 1)).tolist() == [3, 4, 7]
    tables = nb_log_pmf_table((3, 2, 4, 1), np.array([[1.0, 2.0, 0.5, 3.0]]))
    assert [t.shape for t in tables] == [(1, 3), (1, 4), (1, 7)]


@given(problems(max_k=4, max_shape=8))
def test_pmf_table_matches_scipy(prob):
    tables = nb_log_pmf_table(prob.shapes, np.array([prob.rates]))
    for t, term in zip(tables, negbin_terms(prob)):
        m = np.arange(t.shape[1])
        np.testing.assert_allclose(t[0], stats.nbinom.logpmf(m, term.shape, term.success_prob), rtol=1e-12, atol=1e-12)
        assert term.success_prob + term.failure_prob == pytest.approx(1.0)


def test_negbin_term_parameters():
    prob = GammaRankProblem((3, 2, 4), (1.0, 2.0, 0.5))
    t = negbin_terms(prob)
    assert (t[0].shape, t[1].shape) == (2, 4)
    assert t[0].success_prob == pytest.approx(2 / 3)
    assert t[1].success_prob == pytest.approx(0.5 / 3.5)


@given(problems(max_k=4, max_shape=5))
def test_max_summand_brute_scan(prob):
    a = prob.shapes
    terms = negbin_terms(prob)
    best, arg = -np.inf, None

    def rec(k, upper, acc, ms):
        nonlocal best, arg
        if k == len(terms):
            if acc > best:
                best, arg = acc, tuple(ms)
            return
        for m in range(upper):
            rec(k + 1, m + a[k + 1], acc + stats.nbinom.logpmf(m, terms[k].shape, terms[k].success_prob), ms + [m])

    rec(0, a[0], 0.0, [])
    value, m = max_log_summand(prob)
    assert value == pytest.approx(best, abs=1e-10)
    # the reported index attains the maximum (ties may pick another argmax)
    recomputed = sum(stats.nbinom.logpmf(mk, t.shape, t.success_prob) for mk, t in zip(m, terms))
    assert recomputed == pytest.approx(best, abs=1e-10)
    assert value <= log_gamma_rank_prob(prob) + 1e-12


def test_max_summand_single():
    assert max_log_summand(GammaRankProblem((2,), (1.0,))) == (0.0, ())


def test_monte_carlo_agrees():
    prob = GammaRankProblem((3, 2, 4, 1), (1.0, 2.0, 0.5, 3.0))
    est, se = gamma_rank_prob_mc(prob, 400_000, seed=7)
    assert abs(est - gamma_rank_prob(prob)) < 4 * max(se, 1e-6)
    assert gamma_rank_prob_mc(prob, 1000, seed=3) == gamma_rank_prob_mc(prob, 1000, seed=3)
    assert gamma_rank_prob_mc(GammaRankProblem((1,), (1.0,)), 10) == (1.0, 0.0)


def test_embedding_small():
    rep = poisson_embedding_check(GammaRankProblem((3, 2, 4), (1.0, 2.0, 0.5)), 20_000, seed=1)
    assert rep.violations == 0
    assert rep.counts.shape == (20_000, 2)
    assert min(rep.marginal_pvalues) > 1e-3
    assert abs(rep.correlations[0, 1]) < 0.05


def test_embedding_needs_two():
    with pytest.raises(InputError):
        poisson_embedding_check(GammaRankProblem((2,), (1.0,)), 10)


@pytest.mark.parametrize(
    "shapes, rates",
    [((1, 2), (1.0,)), ((0, 2), (1.0, 1.0)), ((1.5, 2), (1.0, 1.0)), ((1, 2), (1.0, -1.0)), ((1, 2), (1.0, np.inf))],
)
def test_problem_validation(shapes, rates):
    with pytest.raises(InputError):
        GammaRankProblem(shapes, rates)


def test_reversed_and_permuted():
    prob = GammaRankProblem((3, 1, 2), (1.0, 2.0, 3.0))
    assert prob.reversed() == GammaRankProblem((2, 1, 3), (3.0, 2.0, 1.0))
    assert prob.permuted((1, 0, 2)).shapes == (1, 3, 2)
    np.testing.assert_allclose(prob.cumulative_rates(), [1, 3, 6])
