"""Sparse count matrices: ingestion, preprocessing and tokenization."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class CountMatrixError(ValueError):
    """Raised for malformed or invalid count data."""


@dataclass(frozen=True, eq=False)
class SparseCountMatrix:
    """Nonnegative integer matrix in coordinate form.

    Entries are kept sorted row-major with unique ``(row, col)`` pairs and
    strictly positive counts. Use :meth:`from_triples` to build one from
    arbitrary (possibly duplicated) triples.
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray
    row_labels: Optional[tuple] = None
    col_labels: Optional[tuple] = None
    _csr: Optional[sp.csr_matrix] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_triples(cls, n_rows, n_cols, rows, cols, counts,
                     row_labels=None, col_labels=None):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        counts = np.asarray(counts, dtype=np.int64).ravel()
        if not (rows.shape == cols.shape == counts.shape):
            raise CountMatrixError("rows, cols and counts must have equal length")
        if n_rows < 0 or n_cols < 0:
            raise CountMatrixError("matrix dimensions must be nonnegative")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
                raise CountMatrixError("index out of bounds")
            if counts.min() < 0:
                raise CountMatrixError("negative count")
        keep = counts > 0
        rows, cols, counts = rows[keep], cols[keep], counts[keep]
        # sum duplicates, sort row-major
        key = rows * max(n_cols, 1) + cols
        uniq, inv = np.unique(key, return_inverse=True)
        summed = np.zeros(uniq.size, dtype=np.int64)
        np.add.at(summed, inv, counts)
        if n_cols:
            urows, ucols = np.divmod(uniq, n_cols)
        else:
            urows = ucols = uniq
        if row_labels is not None:
            row_labels = tuple(str(x) for x in row_labels)
            if len(row_labels) != n_rows:
                raise CountMatrixError("row label count does not match n_rows")
        if col_labels is not None:
            col_labels = tuple(str(x) for x in col_labels)
            if len(col_labels) != n_cols:
                raise CountMatrixError("column label count does not match n_cols")
        return cls(int(n_rows), int(n_cols), urows.astype(np.int64),
                   ucols.astype(np.int64), summed, row_labels, col_labels)

    @classmethod
    def from_dense(cls, dense, row_labels=None, col_labels=None):
        dense = np.asarray(dense)
        if dense.ndim != 2:
            raise CountMatrixError("dense input must be two-dimensional")
        if dense.size and not np.all(np.equal(np.mod(dense, 1), 0)):
            raise CountMatrixError("non-integer value in dense input")
        dense = dense.astype(np.int64)
        r, c = np.nonzero(dense)
        return cls.from_triples(dense.shape[0], dense.shape[1], r, c, dense[r, c],
                                row_labels, col_labels)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return int(self.counts.size)

    @property
    def total(self):
        return int(self.counts.sum(dtype=np.int64))

    @property
    def entries(self):
        return [(int(r), int(c), int(v)) for r, c, v in zip(self.rows, self.cols, self.counts)]

    def row_sums(self):
        return np.bincount(self.rows, weights=self.counts, minlength=self.n_rows).astype(np.int64)

    def col_sums(self):
        return np.bincount(self.cols, weights=self.counts, minlength=self.n_cols).astype(np.int64)

    def to_csr(self, dtype=np.float64):
        """Rows-as-points CSR view (cached for float64)."""
        if dtype == np.float64 and self._csr is not None:
            return self._csr
        mat = sp.csr_matrix((self.counts.astype(dtype), (self.rows, self.cols)),
                            shape=self.shape)
        if dtype == np.float64:
            object.__setattr__(self, "_csr", mat)
        return mat

    def to_dense(self):
        out = np.zeros(self.shape, dtype=np.int64)
        out[self.rows, self.cols] = self.counts
        return out

    def __eq__(self, other):
        if not isinstance(other, SparseCountMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.counts, other.counts)
                and self.row_labels == other.row_labels
                and self.col_labels == other.col_labels)

    __hash__ = None

    def __repr__(self):
        return (f"SparseCountMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz}, "
                f"total={self.total})")


def _mm_error(lineno, msg):
    return CountMatrixError(f"line {lineno}: {msg}")


def load_matrix_market(path):
    """Read a MatrixMarket ``coordinate integer general`` file.

    Indices are converted from 1-based to 0-based and duplicate entries are
    summed. Explicit zero entries are dropped.
    """
    path = Path(path)
    rows, cols, vals = [], [], []
    shape = None
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        header = first.strip().split()
        if (len(header) < 5 or header[0].lower() != "%%matrixmarket"
                or header[1].lower() != "matrix"
                or header[2].lower() != "coordinate"
                or header[3].lower() != "integer"
                or header[4].lower() != "general"):
            raise _mm_error(1, "malformed header; expected "
                               "'%%MatrixMarket matrix coordinate integer general'")
        for lineno, line in enumerate(fh, start=2):
            s = line.strip()
            if not s or s.startswith("%"):
                continue
            parts = s.split()
            if shape is None:
                if len(parts) != 3:
                    raise _mm_error(lineno, "malformed size line")
                try:
                    shape = tuple(int(p) for p in parts)
                except ValueError:
                    raise _mm_error(lineno, "malformed size line") from None
                if min(shape) < 0:
                    raise _mm_error(lineno, "malformed size line")
                continue
            if len(parts) != 3:
                raise _mm_error(lineno, "expected 'row col value'")
            try:
                r, c = int(parts[0]), int(parts[1])
            except ValueError:
                raise _mm_error(lineno, "non-integer index") from None
            try:
                v = int(parts[2])
            except ValueError:
                raise _mm_error(lineno, f"non-integer value {parts[2]!r}") from None
            if not (1 <= r <= shape[0] and 1 <= c <= shape[1]):
                raise _mm_error(lineno, "index out of bounds")
            if v < 0:
                raise _mm_error(lineno, "negative count")
            rows.append(r - 1)
            cols.append(c - 1)
            vals.append(v)
    if shape is None:
        raise CountMatrixError(f"{path}: missing size line")
    return SparseCountMatrix.from_triples(shape[0], shape[1], rows, cols, vals)


def write_matrix_market(m, path):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("%%MatrixMarket matrix coordinate integer general\n")
        fh.write(f"{m.n_rows} {m.n_cols} {m.nnz}\n")
        for r, c, v in zip(m.rows, m.cols, m.counts):
            fh.write(f"{r + 1} {c + 1} {v}\n")


def load_dense_csv(path, has_labels=False):
    """Read a rectangular CSV of nonnegative integers.

    With ``has_labels`` the first row holds column labels and the first
    column holds row labels (the top-left cell is ignored).
    """
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        table = [row for row in csv.reader(fh) if row]
    col_labels = row_labels = None
    offset_r = offset_c = 0
    if has_labels:
        if not table:
            raise CountMatrixError("labelled CSV has no header row")
        col_labels = [s.strip() for s in table[0][1:]]
        table = table[1:]
        row_labels = [row[0].strip() for row in table]
        table = [row[1:] for row in table]
        offset_r = offset_c = 1
    width = len(table[0]) if table else (len(col_labels) if col_labels else 0)
    values = np.zeros((len(table), width), dtype=np.int64)
    for i, row in enumerate(table):
        if len(row) != width:
            raise CountMatrixError(f"ragged row {i + 1 + offset_r}: expected {width} "
                                   f"cells, found {len(row)}")
        for j, cell in enumerate(row):
            try:
                v = int(cell.strip())
            except ValueError:
                raise CountMatrixError(
                    f"non-integer cell at row {i + 1 + offset_r}, column {j + 1 + offset_c}"
                ) from None
            if v < 0:
                raise CountMatrixError(
                    f"negative cell at row {i + 1 + offset_r}, column {j + 1 + offset_c}")
            values[i, j] = v
    if col_labels is not None and len(col_labels) != width:
        raise CountMatrixError("header width does not match data width")
    return SparseCountMatrix.from_dense(values, row_labels, col_labels)


def write_dense_csv(m, path, with_labels=False):
    dense = m.to_dense()
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if with_labels:
            col_labels = m.col_labels or [str(j) for j in range(m.n_cols)]
            row_labels = m.row_labels or [str(i) for i in range(m.n_rows)]
            w.writerow([""] + list(col_labels))
            for lab, row in zip(row_labels, dense):
                w.writerow([lab] + row.tolist())
        else:
            for row in dense:
                w.writerow(row.tolist())


def _merge_rows_by_label(m):
    labels = m.row_labels
    order = {}
    for lab in labels:
        order.setdefault(lab, len(order))
    if len(order) == len(labels):
        return m
    new_index = np.array([order[lab] for lab in labels], dtype=np.int64)
    return SparseCountMatrix.from_triples(
        len(order), m.n_cols, new_index[m.rows], m.cols, m.counts,
        row_labels=list(order), col_labels=m.col_labels)


def subset(m, row_index, col_index):
    """Keep the given rows and columns (in the given order), compacting indices."""
    row_index = np.asarray(row_index, dtype=np.int64)
    col_index = np.asarray(col_index, dtype=np.int64)
    rmap = np.full(m.n_rows, -1, dtype=np.int64)
    rmap[row_index] = np.arange(row_index.size)
    cmap = np.full(m.n_cols, -1, dtype=np.int64)
    cmap[col_index] = np.arange(col_index.size)
    r, c = rmap[m.rows], cmap[m.cols]
    keep = (r >= 0) & (c >= 0)
    row_labels = None if m.row_labels is None else [m.row_labels[i] for i in row_index]
    col_labels = None if m.col_labels is None else [m.col_labels[j] for j in col_index]
    return SparseCountMatrix.from_triples(row_index.size, col_index.size, r[keep], c[keep],
                                          m.counts[keep], row_labels, col_labels)


def preprocess(m, merge_duplicate_labels=False):
    """Drop all-zero rows and columns; optionally merge rows sharing a label."""
    if merge_duplicate_labels and m.row_labels is not None:
        m = _merge_rows_by_label(m)
    keep_r = np.flatnonzero(m.row_sums() > 0)
    keep_c = np.flatnonzero(m.col_sums() > 0)
    if keep_r.size == 0 or keep_c.size == 0:
        raise CountMatrixError("empty after preprocessing")
    if keep_r.size == m.n_rows and keep_c.size == m.n_cols:
        return m
    log.info("preprocess: removed %d zero rows and %d zero columns",
             m.n_rows - keep_r.size, m.n_cols - keep_c.size)
    return subset(m, keep_r, keep_c)


def transpose(m):
    return SparseCountMatrix.from_triples(m.n_cols, m.n_rows, m.cols, m.rows, m.counts,
                                          m.col_labels, m.row_labels)


@dataclass
class TokenTable:
    """One record per unit count.

    ``row_of``/``col_of`` give the matrix cell of each token; ``zr``/``zc``
    hold its current row-topic and column-topic.
    """

    row_of: np.ndarray
    col_of: np.ndarray
    zr: np.ndarray
    zc: np.ndarray
    n_rows: int
    n_cols: int

    def __len__(self):
        return int(self.row_of.size)

    def copy(self):
        return TokenTable(self.row_of.copy(), self.col_of.copy(), self.zr.copy(),
                          self.zc.copy(), self.n_rows, self.n_cols)

    def to_matrix(self):
        """Re-aggregate tokens by cell."""
        return SparseCountMatrix.from_triples(self.n_rows, self.n_cols, self.row_of,
                                              self.col_of, np.ones(len(self), dtype=np.int64))


def to_tokens(m):
    """Expand every count into unit tokens, in row-major cell order."""
    if m.total < 1:
        raise CountMatrixError("cannot tokenize an empty matrix")
    row_of = np.repeat(m.rows, m.counts)
    col_of = np.repeat(m.cols, m.counts)
    zeros = np.zeros(row_of.size, dtype=np.int64)
    return TokenTable(row_of, col_of, zeros, zeros.copy(), m.n_rows, m.n_cols)


def load_matrix(path, has_labels=False):
    """Dispatch on file extension: ``.mtx``/``.mm`` or CSV."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if path.suffix.lower() in (".mtx", ".mm"):
        return load_matrix_market(path)
    return load_dense_csv(path, has_labels=has_labels)
