"""Ordered structures over group labels and their mapping onto sample layouts.

An ordered structure is an ordered set partition of the group labels
``1..p``.  Groups in the same block share a latent mean; blocks are listed
from the smallest latent mean to the largest.  The canonical text form
writes blocks left to right with sorted labels inside, e.g. ``(13)(2)``.
When ``p >= 10`` labels inside a block are comma separated, ``(1,10)(2)``.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

MAX_CATALOG_P = 8
MAX_PARTITION_P = 10


@dataclass(frozen=True)
class ExperimentLayout:
    """Sample-to-group map of an experiment.

    ``group_of[i]`` is the group label (in ``1..p``) of sample ``i``; samples
    are indexed from 0.  ``library_sizes`` is only used by the count model.
    ``sample_ids`` and ``group_names`` are optional bookkeeping carried over
    from layout files.
    """

    group_of: tuple[int, ...]
    library_sizes: tuple[float, ...] | None = None
    sample_ids: tuple[str, ...] | None = None
    group_names: tuple[str, ...] | None = None

    def __post_init__(self):
        groups = tuple(int(g) for g in self.group_of)
        if any(g != h for g, h in zip(groups, self.group_of)):
            raise InputError("group labels must be integers")
        object.__setattr__(self, "group_of", groups)
        n = len(groups)
        if n == 0:
            raise InputError("layout has no samples")
        p = max(groups)
        if min(groups) < 1 or set(groups) != set(range(1, p + 1)):
            raise InputError(f"group labels must cover 1..{p} with no gaps")
        if not 1 < p <= n:
            raise InputError(f"need 1 < p <= n, got p={p}, n={n}")
        if self.library_sizes is not None:
            sizes = tuple(float(s) for s in self.library_sizes)
            if len(sizes) != n:
                raise InputError("library_sizes must have one entry per sample")
            if not all(s > 0 and math.isfinite(s) for s in sizes):
                raise InputError("library sizes must be finite and positive")
            object.__setattr__(self, "library_sizes", sizes)
        if self.sample_ids is not None and len(self.sample_ids) != n:
            raise InputError("sample_ids must have one entry per sample")
        if self.group_names is not None and len(self.group_names) != p:
            raise InputError("group_names must have one entry per group")

    @property
    def n_samples(self) -> int:
        return len(self.group_of)

    @property
    def p(self) -> int:
        return max(self.group_of)

    def replicates(self, group: int) -> np.ndarray:
        """Sample indices belonging to ``group``."""
        return np.flatnonzero(np.asarray(self.group_of) == group)

    @classmethod
    def balanced(cls, p: int, m: int, library_sizes=None) -> "ExperimentLayout":
        """``m`` consecutive replicates in each of ``p`` groups."""
        return cls(tuple(np.repeat(np.arange(1, p + 1), m).tolist()), library_sizes)


def _format_blocks(blocks, p: int, open_: str, close: str) -> str:
    sep = "," if p >= 10 else ""
    return "".join(open_ + sep.join(str(j) for j in b) + close for b in blocks)


def _check_blocks(blocks: Sequence[Sequence[int]], p: int) -> tuple[tuple[int, ...], ...]:
    out = tuple(tuple(sorted(int(j) for j in b)) for b in blocks)
    seen = [j for b in out for j in b]
    if any(len(b) == 0 for b in out):
        raise InputError("blocks must be nonempty")
    if sorted(seen) != list(range(1, p + 1)):
        raise InputError(f"blocks must partition the labels 1..{p} exactly once each")
    return out


@dataclass(frozen=True)
class Partition:
    """Unordered set partition of ``1..p``; blocks are sorted by smallest label."""

    blocks: tuple[tuple[int, ...], ...]
    p: int

    def __post_init__(self):
        blocks = _check_blocks(self.blocks, self.p)
        object.__setattr__(self, "blocks", tuple(sorted(blocks)))

    @property
    def K(self) -> int:
        return len(self.blocks)

    def __str__(self) -> str:
        return _format_blocks(self.blocks, self.p, "{", "}")

    def orderings(self) -> list["OrderedStructure"]:
        """All ``K!`` ordered structures with this partition as parent."""
        out = [OrderedStructure(perm, self.p) for perm in itertools.permutations(self.blocks)]
        return sorted(out, key=OrderedStructure.sort_key)


@dataclass(frozen=True)
class OrderedStructure:
    """Ordered set partition of ``1..p``.

    ``blocks[k]`` holds the groups sharing the ``k``-th smallest latent mean.
    """

    blocks: tuple[tuple[int, ...], ...]
    p: int
    _text: str = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "blocks", _check_blocks(self.blocks, self.p))
        object.__setattr__(self, "_text", _format_blocks(self.blocks, self.p, "(", ")"))

    @property
    def K(self) -> int:
        return len(self.blocks)

    @property
    def is_null(self) -> bool:
        return len(self.blocks) == 1

    def __str__(self) -> str:
        return self._text

    def sort_key(self):
        return (len(self.blocks), self._text)

    def parent(self) -> Partition:
        """The unordered partition obtained by forgetting block order."""
        return Partition(self.blocks, self.p)


@dataclass(frozen=True)
class SampleBlocks:
    """Samples grouped by the blocks of a structure (0-based sample indices)."""

    sample_sets: tuple[np.ndarray, ...]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.sample_sets])

    def indicator(self, n: int) -> np.ndarray:
        """``(n, K)`` 0/1 matrix with ``M[i, k] = 1`` iff sample ``i`` is in block ``k``."""
        m = np.zeros((n, len(self.sample_sets)))
        for k, s in enumerate(self.sample_sets):
            m[s, k] = 1.0
        return m


def _set_partitions(labels: list[int]):
    # restricted-growth recursion; yields lists of blocks sorted by first label
    if not labels:
        yield []
        return
    first, rest = labels[0], labels[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def enumerate_partitions(p: int) -> list[Partition]:
    """All unordered set partitions of ``1..p`` (Bell number many)."""
    if not 1 <= p <= MAX_PARTITION_P:
        raise InputError(f"invalid p={p}: partition catalog supports 1 <= p <= {MAX_PARTITION_P}")
    parts = [Partition(tuple(tuple(b) for b in blocks), p) for blocks in _set_partitions(list(range(1, p + 1)))]
    return sorted(parts, key=lambda u: (u.K, str(u)))


def enumerate_ordered_structures(p: int, include_null: bool = True) -> list[OrderedStructure]:
    """All ordered set partitions of ``1..p``, sorted by ``K`` then canonical text.

    The count is the Fubini number, 3, 13, 75, 541, 4683 for p = 2..6.
    Catalogs are capped at ``p <= 8`` (545,835 structures).
    """
    if not 1 <= p <= MAX_CATALOG_P:
        raise InputError(f"catalog too large / invalid p={p}: need 1 <= p <= {MAX_CATALOG_P}")
    return expand_orderings(enumerate_partitions(p), include_null=include_null)


def expand_orderings(partitions: Iterable[Partition], include_null: bool = True) -> list[OrderedStructure]:
    """Ordered structures whose parents are in ``partitions``, in catalog order."""
    out = []
    for u in partitions:
        if u.K == 1 and not include_null:
            continue
        out.extend(u.orderings())
    return sorted(out, key=OrderedStructure.sort_key)


def structure_blocks(eta: OrderedStructure, layout: ExperimentLayout) -> SampleBlocks:
    """Sample index sets of each block of ``eta`` under ``layout``."""
    if eta.p != layout.p:
        raise InputError(f"structure {eta} is over p={eta.p} groups but layout has p={layout.p}")
    groups = np.asarray(layout.group_of)
    return SampleBlocks(tuple(np.flatnonzero(np.isin(groups, b)) for b in eta.blocks))


_BLOCK = re.compile(r"\(([^()]*)\)")


def parse_structure(text: str, p: int) -> OrderedStructure:
    """Read the canonical text form, e.g. ``parse_structure("(13)(2)", 3)``."""
    text = text.strip()
    pos = 0
    blocks = []
    seen: dict[int, int] = {}
    while pos < len(text):
        m = _BLOCK.match(text, pos)
        if m is None:
            raise InputError(f"malformed structure {text!r} at position {pos}")
        body = m.group(1)
        if "," in body or p >= 10:
            tokens = body.split(",")
        else:
            tokens = list(body)
        block = []
        for tok in tokens:
            if not tok.isdigit():
                raise InputError(f"malformed label {tok!r} in {text!r} at position {m.start(1)}")
            label = int(tok)
            if not 1 <= label <= p:
                raise InputError(f"label {label} out of range 1..{p} in {text!r} at position {m.start(1)}")
            if label in seen:
                raise InputError(f"label {label} repeated in {text!r} at position {m.start(1)}")
            seen[label] = m.start(1)
            block.append(label)
        if not block:
            raise InputError(f"empty block in {text!r} at position {pos}")
        blocks.append(block)
        pos = m.end()
    missing = sorted(set(range(1, p + 1)) - set(seen))
    if missing:
        raise InputError(f"labels {missing} missing from {text!r}")
    return OrderedStructure(tuple(tuple(b) for b in blocks), p)


def fubini_number(p: int) -> int:
    """Number of ordered set partitions of ``p`` labels, via Stirling numbers."""
    # S(n, k) by the triangle recurrence
    s = [[0] * (p + 1) for _ in range(p + 1)]
    s[0][0] = 1
    for n in range(1, p + 1):
        for k in range(1, n + 1):
            s[n][k] = k * s[n - 1][k] + s[n - 1][k - 1]
    return sum(math.factorial(k) * s[p][k] for k in range(1, p + 1))


def filter_catalog(
    catalog: Sequence[OrderedStructure],
    partitions: Sequence[Partition],
    unordered_posteriors: np.ndarray,
    threshold: float = 0.5,
) -> list[OrderedStructure]:
    """Drop ordered structures whose unordered parent no row supports.

    ``unordered_posteriors`` is a ``(G, len(partitions))`` matrix of per-row
    posterior probabilities over ``partitions``.  An ordered structure is kept
    iff some row has posterior above ``threshold`` on its parent.
    """
    if not 0 < threshold < 1:
        raise InputError("threshold must lie in (0, 1)")
    post = np.asarray(unordered_posteriors, dtype=float)
    if post.ndim != 2 or post.shape[1] != len(partitions):
        raise InputError(
            f"unordered posterior matrix has shape {post.shape}, expected (G, {len(partitions)})"
        )
    supported = {u for u, hit in zip(partitions, (post > threshold).any(axis=0)) if hit}
    return [eta for eta in catalog if eta.parent() in supported]


def structure_p(text: str) -> int:
    """Number of groups covered by a structure written in canonical form."""
    tokens = [int(t) for t in re.findall(r"\d+", text)]
    if sorted(tokens) == list(range(1, len(tokens) + 1)):
        return len(tokens)
    return sum(ch.isdigit() for ch in text)
