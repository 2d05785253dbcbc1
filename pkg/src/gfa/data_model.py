"""Multi-view data containers, assembly from paired matrices, and matrix file IO.

Every block is stored with the shared sample mode as rows. Blocks supplied as
column-paired (samples along the columns) are transposed on ingestion and the
original orientation is kept so exports can restore it. Missing entries are
NaN throughout.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

MISSING_TOKENS = ("", "na")


@dataclass(frozen=True)
class LabeledMatrix:
    """A matrix with optional row and column names, as read from a file."""

    values: np.ndarray
    row_names: tuple[str, ...] | None = None
    col_names: tuple[str, ...] | None = None


@dataclass(frozen=True, eq=False)
class DataBlock:
    """One data source: an N x D_m matrix with the samples as rows.

    Attributes
    ----------
    label : str
        Unique block identifier.
    values : ndarray of shape (N, D_m)
        Data values, NaN where missing. Stored read-only.
    feature_names, sample_names : tuple of str
    transposed : bool
        True when the block was supplied with samples along the columns.
    """

    label: str
    values: np.ndarray
    feature_names: tuple[str, ...]
    sample_names: tuple[str, ...]
    transposed: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"block {self.label!r} must be a 2-D matrix, got {values.ndim}-D")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_names", tuple(str(f) for f in self.feature_names))
        object.__setattr__(self, "sample_names", tuple(str(s) for s in self.sample_names))
        n, d = values.shape
        if len(self.feature_names) != d:
            raise DataError(f"block {self.label!r}: {len(self.feature_names)} feature names for {d} columns")
        if len(self.sample_names) != n:
            raise DataError(f"block {self.label!r}: {len(self.sample_names)} sample names for {n} rows")
        if d < 1:
            raise DataError(f"block {self.label!r} has no features")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean matrix, True where observed."""
        m = ~np.isnan(self.values)
        m.setflags(write=False)
        return m

    def original(self) -> np.ndarray:
        """The values in the orientation they were supplied in."""
        return (self.values.T if self.transposed else self.values).copy()


@dataclass(frozen=True, eq=False)
class MultiViewData:
    """An ordered collection of blocks that share the sample (row) mode."""

    blocks: tuple[DataBlock, ...]

    def __post_init__(self):
        blocks = tuple(self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not blocks:
            raise DataError("at least one block is required")
        n = blocks[0].shape[0]
        names = blocks[0].sample_names
        seen = set()
        for b in blocks:
            if b.label in seen:
                raise DataError(f"duplicate block label {b.label!r}")
            seen.add(b.label)
            if b.shape[0] != n:
                raise DataError(f"shared dimension mismatch: {b.label} has {b.shape[0]} samples, expected {n}")
            if b.sample_names != names:
                raise DataError(f"block {b.label!r} sample names differ from block {blocks[0].label!r}")

    @property
    def n_samples(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(b.shape[1] for b in self.blocks)

    @property
    def total_D(self) -> int:
        return sum(self.dims)

    @property
    def shape(self) -> tuple[int, tuple[int, ...]]:
        return self.n_samples, self.dims

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(b.label for b in self.blocks)

    @property
    def sample_names(self) -> tuple[str, ...]:
        return self.blocks[0].sample_names

    @property
    def values(self) -> list[np.ndarray]:
        return [b.values for b in self.blocks]

    @property
    def masks(self) -> list[np.ndarray]:
        return [b.mask for b in self.blocks]

    @cached_property
    def filled(self) -> list[np.ndarray]:
        """Values with missing entries replaced by 0 (sampler working copies)."""
        return [np.where(b.mask, b.values, 0.0) for b in self.blocks]

    @cached_property
    def observed(self) -> list[np.ndarray]:
        """Masks as float arrays, 1.0 where observed."""
        return [b.mask.astype(float) for b in self.blocks]

    @cached_property
    def filled_all(self) -> np.ndarray:
        """All blocks' filled values side by side, N x total_D."""
        return np.hstack(self.filled)

    @cached_property
    def observed_all(self) -> np.ndarray:
        return np.hstack(self.observed)

    @cached_property
    def observed_sq_norms(self) -> np.ndarray:
        """Squared Frobenius norm of each block over its observed entries."""
        return np.array([float((f ** 2).sum()) for f in self.filled])

    @cached_property
    def has_missing(self) -> bool:
        return not all(b.mask.all() for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def block(self, label: str) -> DataBlock:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def with_values(self, values: Iterable[np.ndarray]) -> MultiViewData:
        """New dataset with the same labels and names but different values."""
        values = list(values)
        if len(values) != len(self.blocks):
            raise DataError(f"expected {len(self.blocks)} matrices, got {len(values)}")
        return MultiViewData(tuple(
            DataBlock(b.label, v, b.feature_names, b.sample_names, b.transposed)
            for b, v in zip(self.blocks, values)
        ))

    def export(self) -> dict[str, np.ndarray]:
        """Blocks in their original orientation, keyed by label."""
        return {b.label: b.original() for b in self.blocks}


@dataclass
class ValidationReport:
    """Summary of missingness and normalization hazards."""

    missing_counts: dict[str, int]
    observed_per_feature: dict[str, np.ndarray]
    constant_features: list[tuple[str, str]] = field(default_factory=list)
    total_D: int = 0

    @property
    def has_hazards(self) -> bool:
        return bool(self.constant_features)


def _pairs(group) -> list[tuple[str, object]]:
    if group is None:
        return []
    if isinstance(group, Mapping):
        return [(str(k), v) for k, v in group.items()]
    return [(str(k), v) for k, v in group]


def _unpack(matrix) -> LabeledMatrix:
    if isinstance(matrix, LabeledMatrix):
        return LabeledMatrix(np.asarray(matrix.values, dtype=float), matrix.row_names, matrix.col_names)
    return LabeledMatrix(np.asarray(matrix, dtype=float))


def assemble_dataset(row_paired, column_paired=None, *, strict: bool = True) -> MultiViewData:
    """Build a :class:`MultiViewData` from row-paired and column-paired matrices.

    Parameters
    ----------
    row_paired : mapping or sequence of (label, matrix)
        Sources whose rows are the shared samples. Matrices may be arrays or
        :class:`LabeledMatrix` instances.
    column_paired : mapping or sequence of (label, matrix), optional
        Sources whose columns are the shared samples; these are transposed.
    strict : bool
        Reject blocks with an entirely missing feature and samples missing
        from every block. Disable for prediction batches in which whole
        blocks are unobserved.

    Returns
    -------
    MultiViewData
        Blocks ordered row-paired first, then column-paired.
    """
    rows = _pairs(row_paired)
    cols = _pairs(column_paired)
    if not rows:
        raise DataError("row_paired must contain at least one matrix")

    labels = [lab for lab, _ in rows + cols]
    dupes = sorted({lab for lab in labels if labels.count(lab) > 1})
    if dupes:
        raise DataError(f"duplicate block labels: {', '.join(dupes)}")

    entries = []
    for lab, mat in rows:
        lm = _unpack(mat)
        if lm.values.ndim != 2:
            raise DataError(f"block {lab!r} must be a 2-D matrix")
        entries.append((lab, lm.values, lm.row_names, lm.col_names, False))
    for lab, mat in cols:
        lm = _unpack(mat)
        if lm.values.ndim != 2:
            raise DataError(f"block {lab!r} must be a 2-D matrix")
        entries.append((lab, lm.values.T, lm.col_names, lm.row_names, True))

    n = entries[0][1].shape[0]
    if n < 2:
        raise DataError(f"at least 2 samples are required, got {n}")
    for lab, vals, _, _, transposed in entries[1:]:
        if vals.shape[0] != n:
            if transposed:
                raise DataError(f"shared dimension mismatch: {lab} has {vals.shape[0]} columns, expected {n}")
            raise DataError(f"shared dimension mismatch: {lab} has {vals.shape[0]} rows, expected {n}")

    sample_names = None
    for lab, _, snames, _, _ in entries:
        if snames is None:
            continue
        if sample_names is None:
            sample_names = tuple(snames)
        elif tuple(snames) != sample_names:
            raise DataError(f"block {lab!r} sample names do not match the other blocks")
    if sample_names is None:
        sample_names = tuple(f"sample{i + 1}" for i in range(n))

    blocks = []
    for lab, vals, _, fnames, transposed in entries:
        if fnames is None:
            fnames = tuple(f"{lab}_{j + 1}" for j in range(vals.shape[1]))
        blocks.append(DataBlock(lab, vals, fnames, sample_names, transposed))
    data = MultiViewData(tuple(blocks))

    if strict:
        for b in data.blocks:
            empty_cols = np.flatnonzero(~b.mask.any(axis=0))
            if empty_cols.size:
                raise DataError(f"block {b.label!r} has entirely missing features at indices {empty_cols.tolist()}")
        seen = np.zeros(n, dtype=bool)
        for b in data.blocks:
            seen |= b.mask.any(axis=1)
        if not seen.all():
            raise DataError(f"samples entirely missing across all blocks at indices {np.flatnonzero(~seen).tolist()}")
    return data


def validate(data: MultiViewData) -> ValidationReport:
    """Report missing-entry counts, per-feature observed counts and constant features."""
    report = ValidationReport(missing_counts={}, observed_per_feature={}, total_D=data.total_D)
    for b in data.blocks:
        mask = b.mask
        report.missing_counts[b.label] = int((~mask).sum())
        report.observed_per_feature[b.label] = mask.sum(axis=0)
        for j, name in enumerate(b.feature_names):
            col = b.values[mask[:, j], j]
            if col.size and np.all(col == col[0]):
                report.constant_features.append((b.label, name))
    for lab, name in report.constant_features:
        logger.warning("feature %s in block %s is constant over its observed entries", name, lab)
    return report


def _sniff_delimiter(path: Path, first_line: str) -> str:
    if path.suffix.lower() in (".tsv", ".tab") or "\t" in first_line:
        return "\t"
    return ","


def _parse_value(token: str) -> float:
    token = token.strip()
    if token.lower() in MISSING_TOKENS:
        return np.nan
    return float(token)


def read_matrix(path, delimiter: str | None = None) -> LabeledMatrix:
    """Read a delimited matrix file.

    The first row holds the column names and the first column the row names.
    ``NA`` (any case) or an empty field marks a missing entry.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path} is empty")
    delimiter = delimiter or _sniff_delimiter(path, lines[0])
    rows = list(csv.reader(lines, delimiter=delimiter))
    header, body = rows[0], [r for r in rows[1:] if r]
    col_names = tuple(h.strip() for h in header[1:])
    row_names, values = [], []
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
        row_names.append(r[0].strip())
        try:
            values.append([_parse_value(t) for t in r[1:]])
        except ValueError as exc:
            raise DataError(f"{path}:{i}: {exc}") from None
    arr = np.array(values, dtype=float).reshape(len(body), len(col_names))
    return LabeledMatrix(arr, tuple(row_names), col_names)


def _format_value(v: float) -> str:
    return "NA" if np.isnan(v) else repr(float(v))


def write_matrix(path, values, row_names=None, col_names=None, delimiter: str | None = None) -> Path:
    """Write a matrix in the same format :func:`read_matrix` accepts."""
    path = Path(path)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n, d = values.shape
    row_names = row_names if row_names is not None else [f"row{i + 1}" for i in range(n)]
    col_names = col_names if col_names is not None else [f"col{j + 1}" for j in range(d)]
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab") else ","
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([""] + list(col_names))
        for name, row in zip(row_names, values):
            w.writerow([name] + [_format_value(v) for v in row])
    return path


def read_dataset(row_paths=(), column_paths=(), *, strict: bool = True) -> MultiViewData:
    """Assemble a dataset from matrix files; block labels are the file stems."""
    rows = [(Path(p).stem, read_matrix(p)) for p in row_paths]
    cols = [(Path(p).stem, read_matrix(p)) for p in column_paths]
    return assemble_dataset(rows, cols, strict=strict)


def write_dataset(data: MultiViewData, directory, values=None, suffix: str = "") -> list[Path]:
    """Write each block (or replacement ``values``) in its original orientation."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    values = data.values if values is None else values
    paths = []
    for b, v in zip(data.blocks, values):
        v = np.asarray(v, dtype=float)
        rows, cols = b.sample_names, b.feature_names
        if b.transposed:
            v, rows, cols = v.T, cols, rows
        paths.append(write_matrix(directory / f"{safe_name(b.label)}{suffix}.csv", v, rows, cols))
    return paths


def safe_name(label: str) -> str:
    """File-system safe version of a block label."""
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)
