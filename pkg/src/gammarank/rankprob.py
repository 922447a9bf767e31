"""Probability that independent gamma variables fall in decreasing order.

For independent ``Z_k ~ Gamma(a_k, rate=lam_k)`` with integer shapes, the
event ``Z_1 > Z_2 > ... > Z_K`` equals an event in negative-binomial counts
``M_k`` (points of the superposed Poisson processes ``N_1 + ... + N_k``
before ``Z_{k+1}``).  With cumulative rates ``Lam_k = lam_1 + ... + lam_k``
and ``p_k`` the NB(shape ``a_{k+1}``, success ``lam_{k+1}/Lam_{k+1}``) pmf::

    P(E) = sum_{m_1 < a_1} sum_{m_2 < m_1 + a_2} ... p_1(m_1) ... p_{K-1}(m_{K-1})

The nested sum is evaluated from the innermost index outwards: each pass
turns the inner vector into partial sums (a cumulative sum) and reads it
off at the shifted upper limits, so a problem costs ``O(K * sum(a))``.

The batch functions share the shapes across a leading axis of rates, which
is what the structured mixture densities need: within one structure every
row has the same shapes and only the rates differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import InputError


@dataclass(frozen=True)
class GammaRankProblem:
    """Integer shapes and positive rates of ``Z_1, ..., Z_K``."""

    shapes: tuple[int, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        shapes = _check_shapes(self.shapes)
        rates = tuple(float(r) for r in self.rates)
        if len(rates) != len(shapes):
            raise InputError("shapes and rates must have the same length")
        if not all(r > 0 and math.isfinite(r) for r in rates):
            raise InputError(f"rates must be finite and positive, got {rates}")
        object.__setattr__(self, "shapes", tuple(int(a) for a in shapes))
        object.__setattr__(self, "rates", rates)

    @property
    def K(self) -> int:
        return len(self.shapes)

    def cumulative_rates(self) -> np.ndarray:
        return np.cumsum(self.rates)

    def permuted(self, order) -> "GammaRankProblem":
        return GammaRankProblem(tuple(self.shapes[i] for i in order), tuple(self.rates[i] for i in order))

    def reversed(self) -> "GammaRankProblem":
        return GammaRankProblem(self.shapes[::-1], self.rates[::-1])


@dataclass(frozen=True)
class NegBinomialTerm:
    """Law of the count ``M_k``: failures before ``shape`` successes."""

    shape: int
    success_prob: float
    failure_prob: float


def _check_shapes(shapes) -> np.ndarray:
    a = np.asarray(shapes)
    if a.ndim != 1 or a.size == 0:
        raise InputError("need at least one shape")
    if a.dtype == bool or not np.issubdtype(a.dtype, np.number):
        raise InputError(f"shapes must be integers, got {shapes!r}")
    if not np.all(np.isfinite(a)) or np.any(a != np.round(a)):
        raise InputError(f"shapes must be integers, got {shapes!r}")
    if np.any(a < 1):
        raise InputError(f"shapes must be positive, got {shapes!r}")
    return a.astype(np.int64)


def _check_batch(shapes, rates) -> tuple[np.ndarray, np.ndarray]:
    a = _check_shapes(shapes)
    lam = np.asarray(rates, dtype=float)
    if lam.ndim == 1:
        lam = lam[None, :]
    if lam.ndim != 2 or lam.shape[1] != a.size:
        raise InputError(f"rates must have shape (B, {a.size}), got {lam.shape}")
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        raise InputError("rates must be finite and positive")
    return a, lam


def negbin_terms(problem: GammaRankProblem) -> list[NegBinomialTerm]:
    """The ``K - 1`` negative-binomial laws of ``M_1, ..., M_{K-1}``."""
    lam = np.asarray(problem.rates)
    cum = np.cumsum(lam)
    return [
        NegBinomialTerm(problem.shapes[k + 1], lam[k + 1] / cum[k + 1], cum[k] / cum[k + 1])
        for k in range(problem.K - 1)
    ]


def summation_limits(shapes) -> np.ndarray:
    """Number of admissible values of each ``m_k`` (index ``k = 0..K-2``).

    ``m_k`` ranges over ``0 .. a_1 + ... + a_{k+1} - (k + 1)``.
    """
    a = _check_shapes(shapes)
    return np.cumsum(a[:-1]) - np.arange(a.size - 1)


def nb_log_pmf_table(shapes, rates) -> list[np.ndarray]:
    """``log p_k(m)`` over each summation range.

    Returns one ``(B, L_k)`` array per ``k = 0..K-2`` where ``L_k`` is
    given by :func:`summation_limits`.
    """
    a, lam = _check_batch(shapes, rates)
    log_cum = np.log(np.cumsum(lam, axis=1))
    limits = summation_limits(a)
    out = []
    for k, L in enumerate(limits):
        shape = a[k + 1]
        m = np.arange(L)
        log_coef = gammaln(m + shape) - gammaln(shape) - gammaln(m + 1.0)
        log_success = np.log(lam[:, k + 1]) - log_cum[:, k + 1]
        log_failure = log_cum[:, k] - log_cum[:, k + 1]
        out.append(log_coef[None, :] + shape * log_success[:, None] + m[None, :] * log_failure[:, None])
    return out


def gamma_rank_prob_batch(shapes, rates) -> np.ndarray:
    """Linear-space ``P(Z_1 > ... > Z_K)`` for each row of ``rates``.

    Results that underflow come back as 0.0; use the log version for
    small probabilities.
    """
    a, lam = _check_batch(shapes, rates)
    if a.size == 1:
        return np.ones(lam.shape[0])
    tables = nb_log_pmf_table(a, lam)
    inner = np.ones_like(tables[-1])
    for k in range(len(tables) - 1, -1, -1):
        partial = np.cumsum(np.exp(tables[k]) * inner, axis=1)
        start = a[k] - 1
        width = 1 if k == 0 else tables[k - 1].shape[1]
        inner = partial[:, start:start + width]
    return np.clip(inner[:, 0], 0.0, 1.0)


def log_gamma_rank_prob_batch(shapes, rates) -> np.ndarray:
    """Log-space ``log P(Z_1 > ... > Z_K)`` for each row of ``rates``.

    The inner vectors are carried as logs and accumulated with a running
    log-sum-exp, so nothing is exponentiated.
    """
    a, lam = _check_batch(shapes, rates)
    if a.size == 1:
        return np.zeros(lam.shape[0])
    tables = nb_log_pmf_table(a, lam)
    inner = np.zeros_like(tables[-1])
    for k in range(len(tables) - 1, -1, -1):
        partial = np.logaddexp.accumulate(tables[k] + inner, axis=1)
        start = a[k] - 1
        width = 1 if k == 0 else tables[k - 1].shape[1]
        inner = partial[:, start:start + width]
    return np.minimum(inner[:, 0], 0.0)


def gamma_rank_prob(problem: GammaRankProblem) -> float:
    """Exact ``P(Z_1 > Z_2 > ... > Z_K)``; 1 when ``K == 1``.

    >>> gamma_rank_prob(GammaRankProblem((1, 1), (1.0, 2.0)))  # doctest: +ELLIPSIS
    0.666...
    """
    return float(gamma_rank_prob_batch(problem.shapes, problem.rates)[0])


def log_gamma_rank_prob(problem: GammaRankProblem) -> float:
    """Natural log of :func:`gamma_rank_prob`, accurate far below underflow."""
    return float(log_gamma_rank_prob_batch(problem.shapes, problem.rates)[0])


def max_log_summand(problem: GammaRankProblem) -> tuple[float, tuple[int, ...]]:
    """Largest term of the nested sum and its index vector ``(m_1, ..., m_{K-1})``.

    A max-product pass over the same lattice; the value is a lower bound
    on ``log P(E)``.
    """
    a = np.asarray(problem.shapes)
    if problem.K == 1:
        return 0.0, ()
    tables = [t[0] for t in nb_log_pmf_table(problem.shapes, problem.rates)]
    inner = np.zeros_like(tables[-1])
    back = []
    for k in range(len(tables) - 1, -1, -1):
        terms = tables[k] + inner
        best = np.maximum.accumulate(terms)
        # index of the running maximum (first occurrence)
        idx = np.arange(terms.size)
        arg = np.maximum.accumulate(np.where(terms == best, idx, 0))
        start = a[k] - 1
        width = 1 if k == 0 else tables[k - 1].size
        inner = best[start:start + width]
        back.append(arg[start:start + width])
    back.reverse()
    m = []
    prev = 0
    for arg in back:
        prev = int(arg[prev])
        m.append(prev)
    return float(inner[0]), tuple(m)


def gamma_rank_prob_mc(
    problem: GammaRankProblem, n_draws: int, seed=0, chunk: int = 1_000_000
) -> tuple[float, float]:
    """Monte Carlo estimate of ``P(E)`` and its binomial standard error.

    Draws come from a Philox counter-based generator keyed by ``seed``, so
    results are reproducible for a given seed and chunk size.
    """
    if n_draws < 1:
        raise InputError("n_draws must be positive")
    if problem.K == 1:
        return 1.0, 0.0
    rng = np.random.Generator(np.random.Philox(seed))
    shapes = np.asarray(problem.shapes, dtype=float)
    scales = 1.0 / np.asarray(problem.rates)
    hits = 0
    left = n_draws
    while left:
        size = min(chunk, left)
        z = rng.gamma(shapes, scales, size=(size, problem.K))
        hits += int(np.count_nonzero(np.all(z[:, :-1] > z[:, 1:], axis=1)))
        left -= size
    est = hits / n_draws
    return est, math.sqrt(est * (1.0 - est) / n_draws)


@dataclass
class EmbeddingReport:
    """Outcome of :func:`poisson_embedding_check`.

    ``counts`` holds the simulated ``M_1..M_{K-1}`` (one column each),
    ``violations`` the number of (draw, k) pairs where the order of
    ``Z_k, Z_{k+1}`` disagreed with ``M_k < M_{k-1} + a_k``.
    """

    n_draws: int
    violations: int
    counts: np.ndarray
    marginal_pvalues: tuple[float, ...]
    correlations: np.ndarray


def _process_counts(rng, z, shape, rate, times):
    # Counts N(0, t] of a rate-`rate` Poisson process whose `shape`-th point
    # is at z, for each column of `times`.  Before z the first shape-1 points
    # are uniform on (0, z); after z the process restarts.
    n, r = times.shape
    before = np.sort(rng.uniform(size=(n, shape - 1)) * z[:, None], axis=1)
    early = np.zeros((n, r), dtype=np.int64)
    for j in range(r):
        early[:, j] = np.sum(before < times[:, [j]], axis=1)
    excess = np.maximum(times - z[:, None], 0.0)
    order = np.argsort(excess, axis=1)
    sorted_excess = np.take_along_axis(excess, order, axis=1)
    steps = np.diff(sorted_excess, axis=1, prepend=0.0)
    late_sorted = np.cumsum(rng.poisson(rate * steps), axis=1)
    late = np.empty_like(late_sorted)
    np.put_along_axis(late, order, late_sorted, axis=1)
    return np.where(times < z[:, None], early, shape + late)


def poisson_embedding_check(problem: GammaRankProblem, n_draws: int, seed=0) -> EmbeddingReport:
    """Simulate the Poisson-process embedding behind the nested-sum formula.

    Each ``Z_k`` is the ``a_k``-th point of an independent Poisson process
    ``N_k``; ``M_k`` counts points of ``N_1 + ... + N_k`` in ``(0, Z_{k+1}]``.
    Reports violations of ``Z_k > Z_{k+1} <=> M_k < M_{k-1} + a_k`` (with
    ``M_0 = 0``), chi-square p-values of each ``M_k`` against its
    negative-binomial law, and the empirical correlation matrix of the
    ``M_k`` (their mutual independence is conjectured, not proved).
    """
    from scipy import stats

    K = problem.K
    if K < 2:
        raise InputError("embedding check needs K >= 2")
    rng = np.random.Generator(np.random.Philox(seed))
    a = np.asarray(problem.shapes)
    lam = np.asarray(problem.rates)
    z = np.column_stack([rng.gamma(a[k], 1.0 / lam[k], size=n_draws) for k in range(K)])

    counts = np.zeros((n_draws, K - 1), dtype=np.int64)
    for j in range(K - 1):
        # process j contributes to M_k for every k >= j, evaluated at Z_{k+1}
        times = z[:, j + 1:]
        counts[:, j:] += _process_counts(rng, z[:, j], int(a[j]), lam[j], times)

    prev = np.zeros(n_draws, dtype=np.int64)
    violations = 0
    for k in range(K - 1):
        violations += int(np.count_nonzero((z[:, k] > z[:, k + 1]) != (counts[:, k] < prev + a[k])))
        prev = counts[:, k]

    pvalues = []
    for term, col in zip(negbin_terms(problem), counts.T):
        pvalues.append(_nb_chisquare(col, term, stats))
    corr = np.corrcoef(counts, rowvar=False) if K > 2 else np.ones((1, 1))
    return EmbeddingReport(n_draws, violations, counts, tuple(pvalues), np.atleast_2d(corr))


def _nb_chisquare(sample, term: NegBinomialTerm, stats) -> float:
    n = sample.size
    dist = stats.nbinom(term.shape, term.success_prob)
    top = int(sample.max())
    pmf = dist.pmf(np.arange(top + 1))
    # merge cells from the right until every expected count is at least 5
    edges = [0]
    acc = 0.0
    for m in range(top + 1):
        acc += pmf[m] * n
        if acc >= 5:
            edges.append(m + 1)
            acc = 0.0
    if len(edges) < 3:
        return 1.0
    edges[-1] = top + 1
    observed = np.add.reduceat(np.bincount(sample, minlength=top + 1), edges[:-1])
    expected = np.add.reduceat(pmf, edges[:-1]) * n
    expected[-1] += dist.sf(top) * n
    expected *= n / expected.sum()
    return float(stats.chisquare(observed, expected).pvalue)
