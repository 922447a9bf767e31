"""Mixing-proportion estimation and shared-parameter estimation.

With the shared parameters fixed, the log likelihood of the mixing weights
is strictly concave once there are enough rows, so plain EM from any
interior start reaches the same maximiser.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .errors import InputError, NumericalError
from .model import SharedParams, log_density_matrix
from .structures import ExperimentLayout, OrderedStructure, Partition, enumerate_partitions

logger = logging.getLogger(__name__)

DEFAULT_ITERS = 100
DEFAULT_TOL = 1e-8


@dataclass
class MixtureFit:
    """Result of :func:`em_fit`.

    ``posterior`` is evaluated at the final ``weights``; ``loglik_trace``
    holds the log likelihood at the start of each iteration followed by
    the value at the final weights.
    """

    weights: np.ndarray
    posterior: np.ndarray
    loglik_trace: list[float]
    iterations: int
    converged: bool

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


def _check_logdens(logdens) -> np.ndarray:
    L = np.asarray(logdens, dtype=float)
    if L.ndim != 2 or L.shape[0] == 0 or L.shape[1] == 0:
        raise InputError(f"log-density matrix must be (G, C) with G, C > 0, got shape {L.shape}")
    if not np.all(np.isfinite(L)):
        raise NumericalError("log-density matrix has non-finite entries")
    return L


def log_marginal(logdens_row, pi) -> float | np.ndarray:
    """``log sum_eta pi_eta * exp(logdens_eta)``; works row-wise on matrices."""
    L = np.asarray(logdens_row, dtype=float)
    with np.errstate(divide="ignore"):
        log_pi = np.log(np.asarray(pi, dtype=float))
    return logsumexp(L + log_pi, axis=-1)


def _e_step(L, log_pi):
    joint = L + log_pi
    marg = logsumexp(joint, axis=1)
    return np.exp(joint - marg[:, None]), float(marg.sum())


def em_fit(
    logdens,
    init="uniform",
    max_iters: int = DEFAULT_ITERS,
    rel_tol: float = DEFAULT_TOL,
    seed=None,
) -> MixtureFit:
    """Fit mixing weights to a precomputed ``(G, C)`` log-density matrix.

    ``init`` is ``"uniform"``, ``"random"`` (a flat Dirichlet draw using
    ``seed``) or an explicit probability vector.  Iteration stops once the
    relative change in log likelihood falls below ``rel_tol``.
    """
    L = _check_logdens(logdens)
    G, C = L.shape
    if isinstance(init, str):
        if init == "uniform":
            pi = np.full(C, 1.0 / C)
        elif init == "random":
            pi = np.random.default_rng(seed).dirichlet(np.ones(C))
        else:
            raise InputError(f"unknown init {init!r}")
    else:
        pi = np.asarray(init, dtype=float)
        if pi.shape != (C,) or np.any(pi < 0) or not np.isclose(pi.sum(), 1.0, atol=1e-10):
            raise InputError("init must be a probability vector over the catalog")
        pi = pi / pi.sum()

    trace = []
    converged = False
    it = 0
    with np.errstate(divide="ignore"):
        for it in range(1, max_iters + 1):
            post, ll = _e_step(L, np.log(pi))
            trace.append(ll)
            pi = post.mean(axis=0)
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= rel_tol * abs(trace[-1]):
                converged = True
                break
        post, ll = _e_step(L, np.log(pi))
    trace.append(ll)
    if not np.isfinite(ll):
        raise NumericalError("log likelihood is not finite")
    return MixtureFit(pi, post, trace, it, converged)


def hessian_quadratic_form(logdens, pi, a, reference: int = -1) -> float:
    """``a' H a`` for the Hessian ``H`` of the negative log likelihood.

    The weights are parametrised by all structures except ``reference``,
    whose weight is one minus the rest; ``a`` is indexed by the remaining
    structures in catalog order.  The value is ``sum_g T_a(x_g)^2`` with
    ``T_a(x) = sum_i a_i (p(x|eta_i) - p(x|eta_ref)) / p(x)``.
    """
    L = _check_logdens(logdens)
    pi = np.asarray(pi, dtype=float)
    C = L.shape[1]
    if pi.shape != (C,):
        raise InputError("pi must have one entry per structure")
    if np.any(pi <= 0):
        raise InputError("pi must be strictly positive")
    ref = reference % C
    a = np.asarray(a, dtype=float)
    if a.shape != (C - 1,):
        raise InputError(f"direction must have length {C - 1}")
    marg = log_marginal(L, pi)
    ratios = np.exp(L - marg[:, None])
    f = np.delete(ratios, ref, axis=1) - ratios[:, [ref]]
    T = f @ a
    return float(T @ T)


@dataclass
class EstimationConfig:
    """Settings for :func:`estimate_shared_params`."""

    alpha0_grid: Sequence[int] = tuple(range(1, 21))
    em_iters: int = 30
    include_null: bool = True
    threads: int | None = None


@dataclass
class ParamEstimate:
    """Shared-parameter estimates with diagnostics.

    ``alpha_raw`` is the unrounded moment estimate of the observation
    shape; ``profile`` maps each grid value of ``alpha0`` to the maximised
    unordered-mixture log likelihood.
    """

    params: SharedParams
    alpha_raw: float
    mean_cv2: float
    profile: dict[int, float] = field(default_factory=dict)

    @property
    def best_alpha0(self) -> int:
        return self.params.alpha0


def estimate_alpha(data, layout: ExperimentLayout) -> tuple[float, float]:
    """Moment estimate of the observation shape from within-group CVs.

    For ``m`` gamma replicates with shape ``alpha``,
    ``E[s^2 / xbar^2] = 1 / (alpha + 1/m)`` whatever the mean.  The shape
    solving that identity, averaged over all (row, group) cells with at
    least two replicates, is returned with the pooled mean of ``s^2/xbar^2``.
    """
    X = np.asarray(data, dtype=float)
    cv2 = []
    sizes = []
    for j in range(1, layout.p + 1):
        idx = layout.replicates(j)
        if idx.size < 2:
            continue
        block = X[:, idx]
        cv2.append(block.var(axis=1, ddof=1) / block.mean(axis=1) ** 2)
        sizes.append(np.full(X.shape[0], idx.size))
    if not cv2:
        raise InputError("need at least one group with two or more replicates to estimate alpha")
    cv2 = np.concatenate(cv2)
    m = np.concatenate(sizes).astype(float)
    target = float(cv2.mean())

    def gap(alpha):
        return np.mean(1.0 / (alpha + 1.0 / m)) - target

    if gap(1e-9) <= 0:
        return 1e-9, target
    hi = 1.0
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            return hi, target
    return brentq(gap, 1e-9, hi, xtol=1e-12, rtol=1e-12), target


def unordered_profile(
    data,
    layout: ExperimentLayout,
    alpha: int,
    nu0: float,
    alpha0_grid: Sequence[int],
    partitions: Sequence[Partition],
    em_iters: int = 30,
    threads: int | None = None,
) -> dict[int, float]:
    """Unordered-mixture log likelihood at each ``alpha0`` after a short EM."""
    profile = {}
    for a0 in alpha0_grid:
        params = SharedParams(alpha, int(a0), nu0)
        L = log_density_matrix(data, partitions, layout, params, ordered=False, threads=threads)
        profile[int(a0)] = em_fit(L, max_iters=em_iters, rel_tol=0.0).loglik
    return profile


def estimate_shared_params(data, layout: ExperimentLayout, config: EstimationConfig | None = None) -> ParamEstimate:
    """Estimate ``(alpha, alpha0, nu0)`` for the gamma model.

    1. ``alpha`` from the pooled within-group coefficient of variation,
       rounded to the nearest integer with a floor of 1;
    2. ``nu0`` as the harmonic mean of row means, matching
       ``1/nu0 = E(1/mu)`` on a single-mean row;
    3. ``alpha0`` as the grid value maximising the log likelihood of the
       unordered mixture, whose weights are fitted by a short EM.
    """
    config = config or EstimationConfig()
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[1] != layout.n_samples:
        raise InputError(f"data has shape {X.shape}, layout expects (G, {layout.n_samples})")
    if not np.all(np.isfinite(X)) or np.any(X <= 0):
        raise InputError("gamma model needs finite, strictly positive values")
    alpha_raw, mean_cv2 = estimate_alpha(X, layout)
    alpha = max(1, int(round(alpha_raw)))
    nu0 = float(1.0 / np.mean(1.0 / X.mean(axis=1)))
    partitions = [u for u in enumerate_partitions(layout.p) if config.include_null or u.K > 1]
    profile = unordered_profile(X, layout, alpha, nu0, config.alpha0_grid, partitions, config.em_iters, config.threads)
    best = max(profile, key=lambda k: (profile[k], -k))
    logger.info("estimated alpha=%d (raw %.3f), alpha0=%d, nu0=%.4g", alpha, alpha_raw, best, nu0)
    return ParamEstimate(SharedParams(alpha, best, nu0), alpha_raw, mean_cv2, profile)


def refit_shared_params(
    data,
    layout: ExperimentLayout,
    catalog: Sequence[OrderedStructure],
    params: SharedParams,
    cycles: int = 10,
    em_iters: int = DEFAULT_ITERS,
    threads: int | None = None,
) -> tuple[SharedParams, MixtureFit]:
    """Alternate EM for the weights with an integer grid update of the shapes.

    Each cycle fits the weights at the current shapes, then moves
    ``(alpha, alpha0)`` to the best point of the 3x3 integer neighbourhood
    (holding the weights fixed).  Stops early when the shapes do not move.
    """
    fit = None
    for cycle in range(cycles):
        L = log_density_matrix(data, catalog, layout, params, threads=threads)
        fit = em_fit(L, init=fit.weights if fit is not None else "uniform", max_iters=em_iters)
        best, best_ll = params, fit.loglik
        for da in (-1, 0, 1):
            for da0 in (-1, 0, 1):
                a, a0 = params.alpha + da, params.alpha0 + da0
                if (da, da0) == (0, 0) or a < 1 or a0 < 1:
                    continue
                cand = SharedParams(a, a0, params.nu0)
                Lc = log_density_matrix(data, catalog, layout, cand, threads=threads)
                ll = float(log_marginal(Lc, fit.weights).sum())
                if ll > best_ll:
                    best, best_ll = cand, ll
        logger.info("refit cycle %d: alpha=%d alpha0=%d loglik=%.6f", cycle + 1, best.alpha, best.alpha0, best_ll)
        if best == params:
            break
        params = best
    L = log_density_matrix(data, catalog, layout, params, threads=threads)
    fit = em_fit(L, init=fit.weights, max_iters=em_iters)
    return params, fit
