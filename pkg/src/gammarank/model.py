"""Structured component densities for gamma and Poisson observations.

Gamma model: inverse means ``psi_k`` of the blocks of a structure are i.i.d.
``Gamma(alpha0, alpha0 * nu0)`` conditioned on ``psi_1 > ... > psi_K``, and
``x_i ~ Gamma(alpha, alpha * psi_k)`` for samples in block ``k``.
Integrating the latent values out gives a closed form whose last factor is
a gamma-rank probability with shapes ``alpha0 + alpha * n_k`` and rates
``alpha0 * nu0 + alpha * s_k``.

Count model: means ``mu_k`` are i.i.d. ``Gamma(alpha0, alpha0 * nu0)``
conditioned on ``mu_1 < ... < mu_K`` and ``x_i ~ Poisson(N_i * mu_k)``.  The
rank probability is then over an increasing sequence with shapes
``alpha0 + s_k`` and rates ``alpha0 * nu0 + sum(N_i)``.

Everything is computed on the log scale; the product statistic of a block
only ever appears as a sum of logs.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import InputError
from .rankprob import log_gamma_rank_prob_batch
from .structures import ExperimentLayout, OrderedStructure, Partition, structure_blocks


@dataclass(frozen=True)
class SharedParams:
    """Observation shape ``alpha``, prior shape ``alpha0`` and scale ``nu0``.

    Both shapes must be positive integers because the rank probabilities
    are only available in closed form for integer shapes.
    """

    alpha: int
    alpha0: int
    nu0: float

    def __post_init__(self):
        for name in ("alpha", "alpha0"):
            v = getattr(self, name)
            if isinstance(v, bool) or not float(v).is_integer() or v < 1:
                raise InputError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not (self.nu0 > 0 and math.isfinite(self.nu0)):
            raise InputError(f"nu0 must be positive and finite, got {self.nu0!r}")
        object.__setattr__(self, "nu0", float(self.nu0))

    @classmethod
    def rounded(cls, alpha: float, alpha0: float, nu0: float) -> "SharedParams":
        """Round shapes to the nearest positive integer (floor of 1)."""
        return cls(max(1, int(round(alpha))), max(1, int(round(alpha0))), nu0)


@dataclass(frozen=True)
class BlockStats:
    """Per-block statistics of one row under one structure.

    ``log_products`` is the log of the block product of values.  For count
    data ``size_sums`` holds the summed library sizes of each block and
    ``log_size_dot`` the sum of ``x_i * log N_i`` over the block.
    """

    sums: np.ndarray
    log_products: np.ndarray
    sizes: np.ndarray
    size_sums: np.ndarray | None = None
    log_size_dot: np.ndarray | None = None

    def log_u(self, params: SharedParams) -> np.ndarray:
        """``log u_k = sum_{i in block k} x_i * log(N_i / (alpha0*nu0 + n_k))``."""
        if self.size_sums is None:
            raise InputError("log_u needs library sizes")
        return self.log_size_dot - self.sums * np.log(params.alpha0 * params.nu0 + self.size_sums)


def _as_row(row, n: int) -> np.ndarray:
    x = np.asarray(row, dtype=float)
    if x.shape != (n,):
        raise InputError(f"row has shape {x.shape}, layout expects ({n},)")
    return x


def _check_positive(x: np.ndarray):
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise InputError("gamma model needs finite, strictly positive values")


def _check_counts(x: np.ndarray):
    if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x != np.round(x)):
        raise InputError("count model needs nonnegative integer values")


def block_stats(row, eta: OrderedStructure | Partition, layout: ExperimentLayout) -> BlockStats:
    """Block sums, log products and sizes of ``row`` under ``eta``."""
    x = _as_row(row, layout.n_samples)
    sets = _sample_sets(eta, layout)
    sums = np.array([x[s].sum() for s in sets])
    with np.errstate(divide="ignore"):
        logx = np.log(x)
    log_products = np.array([logx[s].sum() for s in sets])
    sizes = np.array([len(s) for s in sets])
    if layout.library_sizes is None:
        return BlockStats(sums, log_products, sizes)
    N = np.asarray(layout.library_sizes)
    logN = np.log(N)
    return BlockStats(
        sums,
        log_products,
        sizes,
        size_sums=np.array([N[s].sum() for s in sets]),
        log_size_dot=np.array([np.dot(x[s], logN[s]) for s in sets]),
    )


def _sample_sets(eta, layout: ExperimentLayout):
    if isinstance(eta, Partition):
        eta = OrderedStructure(eta.blocks, eta.p)
    return structure_blocks(eta, layout).sample_sets


def _indicator(eta, layout: ExperimentLayout) -> np.ndarray:
    sets = _sample_sets(eta, layout)
    ind = np.zeros((layout.n_samples, len(sets)))
    for k, s in enumerate(sets):
        ind[s, k] = 1.0
    return ind


def _gamma_terms(X, logX_rowsum, ind, params: SharedParams, ordered: bool) -> np.ndarray:
    # log density for every row of X under one structure (block indicator `ind`)
    alpha, alpha0, nu0 = params.alpha, params.alpha0, params.nu0
    n = X.shape[1]
    K = ind.shape[1]
    n_k = ind.sum(axis=0)
    shapes = alpha0 + alpha * n_k
    S = X @ ind
    shift = alpha0 * nu0 / alpha
    log_c = (
        -n * gammaln(alpha)
        - K * gammaln(alpha0)
        + alpha0 * K * math.log(shift)
        + gammaln(shapes).sum()
    )
    out = log_c + (alpha - 1) * logX_rowsum - np.log(S + shift) @ shapes
    if ordered and K > 1:
        out += gammaln(K + 1)
        out += log_gamma_rank_prob_batch(shapes.astype(np.int64), alpha0 * nu0 + alpha * S)
    return out


def log_density_gamma(row, eta: OrderedStructure, layout: ExperimentLayout, params: SharedParams) -> float:
    """Log component density of a positive row under ordered structure ``eta``."""
    x = _as_row(row, layout.n_samples)
    _check_positive(x)
    logx = np.log(x)
    return float(_gamma_terms(x[None], np.array([logx.sum()]), _indicator(eta, layout), params, True)[0])


def log_density_gamma_unordered(
    row, partition: Partition | OrderedStructure, layout: ExperimentLayout, params: SharedParams
) -> float:
    """Log density of the unordered component: no order constraint and no ``K!`` factor."""
    x = _as_row(row, layout.n_samples)
    _check_positive(x)
    logx = np.log(x)
    return float(_gamma_terms(x[None], np.array([logx.sum()]), _indicator(partition, layout), params, False)[0])


def increasing_rank_log_prob(shapes, rates) -> np.ndarray:
    """``log P(Z_1 < ... < Z_K)`` per row of ``rates``, via the reversed problem."""
    shapes = np.asarray(shapes)
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    return log_gamma_rank_prob_batch(shapes[::-1], rates[:, ::-1])


def _count_terms(x: np.ndarray, ind: np.ndarray, N: np.ndarray, params: SharedParams) -> float:
    alpha0, nu0 = params.alpha0, params.nu0
    K = ind.shape[1]
    s = x @ ind
    n_k = N @ ind
    rate = alpha0 * nu0 + n_k
    log_rate = np.log(rate)
    log_u = (x * np.log(N)) @ ind - s * log_rate
    out = (
        gammaln(K + 1)
        + alpha0 * K * math.log(alpha0 * nu0)
        - K * gammaln(alpha0)
        - alpha0 * log_rate.sum()
        - gammaln(x + 1).sum()
        + (log_u + gammaln(s + alpha0)).sum()
    )
    if K > 1:
        out += increasing_rank_log_prob((alpha0 + s).astype(np.int64), rate)[0]
    return float(out)


def log_density_counts(row, eta: OrderedStructure, layout: ExperimentLayout, params: SharedParams) -> float:
    """Log predictive probability of a count row under ``eta``.

    Needs ``layout.library_sizes``; ``params.alpha`` is not used.
    """
    if layout.library_sizes is None:
        raise InputError("count model needs library sizes in the layout")
    x = _as_row(row, layout.n_samples)
    _check_counts(x)
    return _count_terms(x, _indicator(eta, layout), np.asarray(layout.library_sizes), params)


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit value, else ``GAMMARANK_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("GAMMARANK_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def log_density_matrix(
    data,
    catalog: Sequence[OrderedStructure | Partition],
    layout: ExperimentLayout,
    params: SharedParams,
    mode: str = "gamma",
    ordered: bool = True,
    threads: int | None = None,
) -> np.ndarray:
    """``(G, len(catalog))`` matrix of log component densities.

    ``mode`` is ``"gamma"`` or ``"counts"``.  With ``ordered=False`` the
    gamma model's unordered components are evaluated instead (the catalog
    may then hold :class:`Partition` objects).  Columns are computed
    independently, optionally on a thread pool; results do not depend on
    the number of threads.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[1] != layout.n_samples:
        raise InputError(f"data has shape {X.shape}, layout expects (G, {layout.n_samples})")
    if len(catalog) == 0:
        raise InputError("empty catalog")
    if mode == "gamma":
        _check_positive(X)
        rowsum = np.log(X).sum(axis=1)

        def column(eta):
            return _gamma_terms(X, rowsum, _indicator(eta, layout), params, ordered)
    elif mode == "counts":
        if layout.library_sizes is None:
            raise InputError("count model needs library sizes in the layout")
        if not ordered:
            raise InputError("unordered components are only defined for the gamma model")
        _check_counts(X)
        N = np.asarray(layout.library_sizes)

        def column(eta):
            ind = _indicator(eta, layout)
            return np.array([_count_terms(x, ind, N, params) for x in X])
    else:
        raise InputError(f"unknown mode {mode!r}")

    workers = resolve_threads(threads)
    if workers == 1:
        cols = [column(eta) for eta in catalog]
    else:
        with ThreadPoolExecutor(workers) as pool:
            cols = list(pool.map(column, catalog))
    return np.column_stack(cols)
