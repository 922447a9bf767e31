"""Cluster assignment from posterior structure probabilities."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import comb

from .errors import InputError
from .structures import OrderedStructure

UNASSIGNED = "UNASSIGNED"


@dataclass
class ClusterAssignment:
    """Per-row best structure, its posterior probability and an assigned flag.

    ``threshold`` is the cut-off ``c`` used, or ``"bayes"``.  Ties in the
    posterior go to the structure with the lowest catalog index.
    """

    best: np.ndarray
    prob: np.ndarray
    assigned: np.ndarray
    threshold: float | str = "bayes"
    row_ids: Sequence[str] | None = None

    def __len__(self):
        return self.best.size

    def members(self) -> dict[int, np.ndarray]:
        """Row indices of each nonempty cluster, keyed by catalog index."""
        rows = np.flatnonzero(self.assigned)
        return {int(c): rows[self.best[rows] == c] for c in np.unique(self.best[rows])}

    def sizes(self) -> dict[int, int]:
        return {c: len(m) for c, m in self.members().items()}

    @property
    def n_unassigned(self) -> int:
        return int(np.count_nonzero(~self.assigned))

    def labels(self) -> np.ndarray:
        """Catalog index per row, ``-1`` for unassigned rows."""
        return np.where(self.assigned, self.best, -1)


def _check_posterior(posterior) -> np.ndarray:
    P = np.asarray(posterior, dtype=float)
    if P.ndim != 2:
        raise InputError("posterior must be a (G, C) matrix")
    if P.size and (np.any(P < 0) or not np.all(np.isfinite(P))):
        raise InputError("posterior entries must be finite and nonnegative")
    return P


def assign_bayes(posterior, row_ids=None) -> ClusterAssignment:
    """Assign every row to its most probable structure."""
    P = _check_posterior(posterior)
    if P.shape[0] == 0:
        return ClusterAssignment(np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0, dtype=bool), "bayes", row_ids)
    best = np.argmax(P, axis=1)
    prob = P[np.arange(P.shape[0]), best]
    return ClusterAssignment(best, prob, np.ones(best.size, dtype=bool), "bayes", row_ids)


def assign_threshold(posterior, c: float, row_ids=None) -> ClusterAssignment:
    """Assign a row to a structure when its posterior probability is at least ``c``.

    For ``c > 0.5`` at most one structure can qualify.  For smaller ``c``
    several may, and the most probable of them is used.
    """
    if not 0 < c <= 1:
        raise InputError(f"threshold c must lie in (0, 1], got {c}")
    bayes = assign_bayes(posterior, row_ids)
    return ClusterAssignment(bayes.best, bayes.prob, bayes.prob >= c, float(c), row_ids)


@dataclass
class ClusterRow:
    index: int
    structure: str
    size: int
    mean_posterior: float


@dataclass
class ClusterSummary:
    """Clusters sorted by decreasing size (ties by catalog index)."""

    clusters: list[ClusterRow]
    n_unassigned: int
    size_distribution: dict[int, int]

    def __len__(self):
        return len(self.clusters)


def cluster_summary(assignment: ClusterAssignment, catalog: Sequence[OrderedStructure]) -> ClusterSummary:
    """Size, structure text and mean posterior of each nonempty cluster."""
    rows = []
    for c, idx in assignment.members().items():
        rows.append(ClusterRow(c, str(catalog[c]), len(idx), float(assignment.prob[idx].mean())))
    rows.sort(key=lambda r: (-r.size, r.index))
    dist = dict(sorted(Counter(r.size for r in rows).items()))
    return ClusterSummary(rows, assignment.n_unassigned, dist)


def _labels_of(x):
    if isinstance(x, ClusterAssignment):
        if not np.all(x.assigned):
            raise InputError("adjusted Rand index needs fully assigned partitions")
        return x.best, x.row_ids
    return np.asarray(x), None


def adjusted_rand_index(assignment_a, assignment_b) -> float:
    """Hubert-Arabie adjusted Rand index between two partitions of the same rows.

    Accepts :class:`ClusterAssignment` objects or label arrays.  When both
    assignments carry row ids they must match exactly.
    """
    a, ids_a = _labels_of(assignment_a)
    b, ids_b = _labels_of(assignment_b)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError("partitions cover different row sets")
    if ids_a is not None and ids_b is not None and list(ids_a) != list(ids_b):
        raise InputError("partitions cover different row sets")
    n = a.size
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    sum_cells = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    expected = sum_a * sum_b / comb(n, 2)
    top = 0.5 * (sum_a + sum_b)
    if top == expected:
        # both partitions trivial (all singletons or one block)
        return 1.0
    return float((sum_cells - expected) / (top - expected))
