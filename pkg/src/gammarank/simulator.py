"""Synthetic data drawn from the structured mixture itself.

Each row draws a structure from the weights, then ``K`` i.i.d.
``Gamma(alpha0, alpha0 * nu0)`` latent values.  Sorting them gives exactly
the order-conditioned prior (every ordering of an i.i.d. sample is equally
likely), so no rejection step is needed.  Every row has its own Philox
stream keyed by ``(seed, row)``; output does not depend on how rows are
batched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cluster import assign_bayes
from .em import MixtureFit
from .errors import InputError
from .model import SharedParams
from .structures import ExperimentLayout, OrderedStructure, structure_blocks


@dataclass
class SimulationConfig:
    layout: ExperimentLayout
    params: SharedParams
    catalog: Sequence[OrderedStructure]
    weights: np.ndarray
    n_rows: int
    seed: int = 0
    mode: str = "gamma"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.catalog),):
            raise InputError("weights must have one entry per catalog structure")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-10):
            raise InputError("weights must lie on the probability simplex")
        self.weights = w / w.sum()
        if self.mode not in ("gamma", "counts"):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.mode == "counts" and self.layout.library_sizes is None:
            raise InputError("count simulation needs library sizes in the layout")
        if self.n_rows < 1:
            raise InputError("n_rows must be positive")
        if any(eta.p != self.layout.p for eta in self.catalog):
            raise InputError("catalog structures do not match the layout's group count")


@dataclass
class SimulationResult:
    """Simulated matrix, generating structure index per row, and latent means.

    ``means[g, i]`` is the expected value of ``data[g, i]`` given the
    latent draw (``None`` unless requested).
    """

    data: np.ndarray
    labels: np.ndarray
    means: np.ndarray | None = None


def row_rng(seed: int, row: int) -> np.random.Generator:
    """Independent Philox stream for one row."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, row])))


def simulate(config: SimulationConfig, return_means: bool = False) -> SimulationResult:
    layout, params = config.layout, config.params
    n = layout.n_samples
    block_of = []
    for eta in config.catalog:
        member = np.empty(n, dtype=np.int64)
        for k, s in enumerate(structure_blocks(eta, layout).sample_sets):
            member[s] = k
        block_of.append(member)
    cdf = np.cumsum(config.weights)
    cdf[-1] = 1.0
    N = np.asarray(layout.library_sizes) if config.mode == "counts" else None

    data = np.empty((config.n_rows, n))
    labels = np.empty(config.n_rows, dtype=np.int64)
    means = np.empty((config.n_rows, n))
    for g in range(config.n_rows):
        rng = row_rng(config.seed, g)
        c = int(np.searchsorted(cdf, rng.uniform(), side="right"))
        c = min(c, len(cdf) - 1)
        labels[g] = c
        K = config.catalog[c].K
        latent = np.sort(rng.gamma(params.alpha0, 1.0 / (params.alpha0 * params.nu0), size=K))
        if config.mode == "gamma":
            # latent values are inverse means; block 1 has the largest
            psi = latent[::-1][block_of[c]]
            data[g] = rng.gamma(params.alpha, 1.0 / (params.alpha * psi))
            means[g] = 1.0 / psi
        else:
            mu = latent[block_of[c]]
            data[g] = rng.poisson(N * mu)
            means[g] = N * mu
    return SimulationResult(data, labels, means if return_means else None)


@dataclass
class PosteriorCheck:
    """Confusion matrix (true structure x Bayes assignment) and weight error."""

    confusion: np.ndarray
    weight_error: float
    accuracy: float


def empirical_posterior_check(labels, true_weights, fit: MixtureFit) -> PosteriorCheck:
    """Compare a fit with the truth of a simulation."""
    labels = np.asarray(labels)
    true_weights = np.asarray(true_weights, dtype=float)
    C = fit.posterior.shape[1]
    if labels.shape != (fit.posterior.shape[0],) or true_weights.shape != (C,):
        raise InputError("labels / weights do not match the fit")
    assigned = assign_bayes(fit.posterior).best
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (labels, assigned), 1)
    return PosteriorCheck(
        confusion,
        float(np.max(np.abs(fit.weights - true_weights))),
        float(np.mean(assigned == labels)),
    )
