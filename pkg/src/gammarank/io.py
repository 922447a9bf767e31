"""Reading expression matrices and layouts; writing run outputs.

Matrices are delimited text with a header of sample ids and row ids in the
first column.  Numbers are written with 17 significant digits so that a
write/read round trip is exact.
"""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cluster import UNASSIGNED, ClusterAssignment
from .em import MixtureFit
from .errors import InputError
from .structures import ExperimentLayout, OrderedStructure


def fmt(x: float) -> str:
    return f"{x:.17g}"


def _delimiter(path, sep: str | None) -> str:
    if sep is not None:
        return {"tsv": "\t", "csv": ","}.get(sep, sep)
    return "," if str(path).lower().endswith(".csv") else "\t"


@dataclass
class DataMatrix:
    row_ids: list[str]
    sample_ids: list[str]
    values: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def _rows(path, sep):
    try:
        with open(path, newline="") as fh:
            yield from enumerate(csv.reader(fh, delimiter=_delimiter(path, sep)), start=1)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def read_matrix(path, mode: str = "gamma", floor: float | None = None, sep: str | None = None) -> DataMatrix:
    """Parse and validate an expression matrix.

    Gamma mode rejects nonpositive entries unless ``floor`` is given, in
    which case values below ``floor`` are raised to it.  Counts mode rejects
    anything that is not a nonnegative integer.  ``mode=None`` skips the
    domain checks (used for posterior tables).
    """
    if mode not in ("gamma", "counts", None):
        raise InputError(f"unknown mode {mode!r}")
    header = None
    row_ids: list[str] = []
    values: list[list[float]] = []
    seen = set()
    for lineno, fields in _rows(path, sep):
        if not fields or all(not f.strip() for f in fields):
            continue
        if header is None:
            header = [f.strip() for f in fields[1:]]
            if not header:
                raise InputError(f"{path}:{lineno}: header has no sample columns")
            if len(set(header)) != len(header):
                raise InputError(f"{path}:{lineno}: duplicate sample ids in header")
            continue
        if len(fields) != len(header) + 1:
            raise InputError(f"{path}:{lineno}: expected {len(header) + 1} fields, found {len(fields)}")
        rid = fields[0].strip()
        if rid in seen:
            raise InputError(f"{path}:{lineno}: duplicate row id {rid!r}")
        seen.add(rid)
        row = []
        for col, text in zip(header, fields[1:]):
            try:
                v = float(text)
            except ValueError:
                raise InputError(f"{path}:{lineno}: invalid number {text!r} (row {rid}, column {col})") from None
            if not math.isfinite(v):
                raise InputError(f"{path}:{lineno}: non-finite value (row {rid}, column {col})")
            if mode == "counts" and (v < 0 or v != int(v)):
                raise InputError(f"{path}:{lineno}: {text!r} is not a nonnegative integer count (row {rid}, column {col})")
            if mode == "gamma":
                if floor is not None:
                    v = max(v, floor)
                if v <= 0:
                    raise InputError(
                        f"{path}:{lineno}: nonpositive value {text!r} (row {rid}, column {col}); see --floor"
                    )
            row.append(v)
        row_ids.append(rid)
        values.append(row)
    if header is None:
        raise InputError(f"{path}: empty file")
    return DataMatrix(row_ids, header, np.array(values, dtype=float).reshape(len(values), len(header)))


def write_matrix(path, matrix: DataMatrix, sep: str = "\t"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=sep, lineterminator="\n")
        w.writerow(["id", *matrix.sample_ids])
        for rid, row in zip(matrix.row_ids, matrix.values):
            w.writerow([rid, *(fmt(v) for v in row)])


def read_layout(path, sep: str | None = None) -> ExperimentLayout:
    """Two or three columns: sample id, group label, optional library size.

    A header line is recognised when its second field is ``group``.  Group
    labels are renumbered ``1..p`` in order of first appearance; the
    original names are kept in ``group_names``.
    """
    samples, groups, sizes = [], [], []
    for lineno, fields in _rows(path, sep):
        fields = [f.strip() for f in fields]
        if not fields or not any(fields) or fields[0].startswith("#"):
            continue
        if not samples and len(fields) >= 2 and fields[1].lower() == "group":
            continue
        if len(fields) not in (2, 3):
            raise InputError(f"{path}:{lineno}: expected 2 or 3 fields, found {len(fields)}")
        if fields[0] in samples:
            raise InputError(f"{path}:{lineno}: duplicate sample id {fields[0]!r}")
        if not fields[1]:
            raise InputError(f"{path}:{lineno}: empty group label")
        samples.append(fields[0])
        groups.append(fields[1])
        if len(fields) == 3:
            try:
                sizes.append(float(fields[2]))
            except ValueError:
                raise InputError(f"{path}:{lineno}: invalid library size {fields[2]!r}") from None
    if not samples:
        raise InputError(f"{path}: no samples")
    if sizes and len(sizes) != len(samples):
        raise InputError(f"{path}: library sizes must be given for every sample or none")
    names = list(dict.fromkeys(groups))
    if len(names) < 2:
        raise InputError(f"{path}: need at least two groups, found {len(names)}")
    labels = tuple(names.index(g) + 1 for g in groups)
    return ExperimentLayout(labels, tuple(sizes) if sizes else None, tuple(samples), tuple(names))


def write_layout(path, layout: ExperimentLayout):
    ids = layout.sample_ids or tuple(f"s{i + 1}" for i in range(layout.n_samples))
    names = layout.group_names or tuple(str(j) for j in range(1, layout.p + 1))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["sample", "group"] + (["library_size"] if layout.library_sizes else []))
        for i, sid in enumerate(ids):
            row = [sid, names[layout.group_of[i] - 1]]
            if layout.library_sizes:
                row.append(fmt(layout.library_sizes[i]))
            w.writerow(row)


def align_layout(layout: ExperimentLayout, sample_ids: Sequence[str]) -> ExperimentLayout:
    """Reorder a layout read from file to the column order of a matrix.

    Group numbering (and hence structure text) is kept as in the layout file.
    """
    if layout.sample_ids is None:
        if len(sample_ids) != layout.n_samples:
            raise InputError("layout and matrix have different numbers of samples")
        return layout
    pos = {s: i for i, s in enumerate(layout.sample_ids)}
    missing = [s for s in layout.sample_ids if s not in set(sample_ids)]
    if missing:
        raise InputError(f"layout samples missing from matrix header: {missing}")
    extra = [s for s in sample_ids if s not in pos]
    if extra:
        raise InputError(f"matrix samples missing from layout: {extra}")
    order = [pos[s] for s in sample_ids]
    sizes = tuple(layout.library_sizes[i] for i in order) if layout.library_sizes else None
    return ExperimentLayout(
        tuple(layout.group_of[i] for i in order), sizes, tuple(sample_ids), layout.group_names
    )


def _write_tsv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_posterior(path, row_ids, catalog: Sequence[OrderedStructure], posterior: np.ndarray):
    _write_tsv(Path(path), ["id", *map(str, catalog)], ([rid, *map(fmt, row)] for rid, row in zip(row_ids, posterior)))


def read_posterior(path) -> tuple[list[str], list[str], np.ndarray]:
    """Row ids, structure texts (column headers) and the posterior matrix."""
    m = read_matrix(path, mode=None)
    return m.row_ids, m.sample_ids, m.values


def write_assignments(path, row_ids, catalog: Sequence[OrderedStructure], assignment: ClusterAssignment):
    rows = []
    for rid, c, p, ok in zip(row_ids, assignment.best, assignment.prob, assignment.assigned):
        rows.append([rid, str(catalog[c]), fmt(p), str(int(c)) if ok else UNASSIGNED])
    _write_tsv(Path(path), ["id", "structure", "posterior", "cluster"], rows)


def read_assignments(path, sep: str | None = None) -> tuple[list[str], list[str]]:
    """Row ids and cluster labels from an assignment file.

    Uses the ``cluster`` column when the header has one, otherwise the
    second column, so two-column files from other tools also work.
    """
    ids, labels = [], []
    col = 1
    for lineno, fields in _rows(path, sep):
        if not fields:
            continue
        if lineno == 1:
            names = [f.strip().lower() for f in fields]
            col = names.index("cluster") if "cluster" in names else 1
            continue
        if len(fields) <= col:
            raise InputError(f"{path}:{lineno}: missing cluster column")
        ids.append(fields[0].strip())
        labels.append(fields[col].strip())
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate row ids")
    return ids, labels


def standardized_profiles(values: np.ndarray, layout: ExperimentLayout) -> np.ndarray:
    """Per-row group means, centred and scaled across groups."""
    means = np.column_stack([values[:, layout.replicates(j)].mean(axis=1) for j in range(1, layout.p + 1)])
    sd = means.std(axis=1, ddof=1, keepdims=True)
    sd[sd == 0] = 1.0
    return (means - means.mean(axis=1, keepdims=True)) / sd


def write_outputs(
    outdir,
    matrix: DataMatrix,
    layout: ExperimentLayout,
    catalog: Sequence[OrderedStructure],
    fit: MixtureFit,
    assignment: ClusterAssignment,
    manifest: dict,
    posterior: bool = True,
) -> dict[str, Path]:
    """Write weights, log-likelihood trace, assignments, profiles, posterior and manifest.

    Every file is a deterministic function of the inputs and settings.
    """
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    paths = {
        "weights": out / "weights.tsv",
        "loglik": out / "loglik.tsv",
        "assignments": out / "assignments.tsv",
        "profiles": out / "profiles.tsv",
        "manifest": out / "manifest.json",
    }
    try:
        _write_tsv(paths["weights"], ["structure", "weight"], ([str(e), fmt(w)] for e, w in zip(catalog, fit.weights)))
        _write_tsv(paths["loglik"], ["iteration", "loglik"], ([i, fmt(v)] for i, v in enumerate(fit.loglik_trace)))
        write_assignments(paths["assignments"], matrix.row_ids, catalog, assignment)
        prof = standardized_profiles(matrix.values, layout)
        names = layout.group_names or [str(j) for j in range(1, layout.p + 1)]
        order = sorted(range(len(matrix.row_ids)), key=lambda g: (not assignment.assigned[g], assignment.best[g], g))
        _write_tsv(
            paths["profiles"],
            ["id", "cluster", "structure", *names],
            (
                [
                    matrix.row_ids[g],
                    str(int(assignment.best[g])) if assignment.assigned[g] else UNASSIGNED,
                    str(catalog[assignment.best[g]]),
                    *map(fmt, prof[g]),
                ]
                for g in order
            ),
        )
        if posterior:
            paths["posterior"] = out / "posterior.tsv"
            write_posterior(paths["posterior"], matrix.row_ids, catalog, fit.posterior)
        with open(paths["manifest"], "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise InputError(f"cannot write outputs to {out}: {exc}") from exc
    return paths


def versions() -> dict[str, str]:
    import scipy

    from . import __version__

    return {"gammarank": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}
