"""Domain types shared across the package, plus matrix ingestion."""

import csv
import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DataError

VARIANCE_FLOOR = 1e-12
INTEGRALITY_TOL = 1e-9


class Family(str, enum.Enum):
    POISSON = "poisson"
    GAUSSIAN = "gaussian"


class Method(str, enum.Enum):
    BOOT = "boot"
    DECON = "decon"
    IMPUTE = "impute"


def _frozen_array(values, dtype=np.float64):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DataMatrix:
    """Non-negative p x n observation matrix (rows are variables).

    ``removed_rows`` lists the labels (or original 0-based indices when the
    input had no row labels) of all-zero rows dropped during preprocessing.
    """

    values: np.ndarray
    row_labels: Optional[tuple] = None
    col_labels: Optional[tuple] = None
    removed_rows: tuple = ()

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.ndim != 2:
            raise DataError(f"data matrix must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError("data matrix must have at least one row and one column")
        if not np.all(np.isfinite(values)):
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite entry at cell ({i + 1}, {j + 1})")
        if np.any(values < 0):
            i, j = np.argwhere(values < 0)[0]
            raise DataError(f"negative entry {values[i, j]!r} at cell ({i + 1}, {j + 1})")
        object.__setattr__(self, "values", values)
        for name, size in (("row_labels", values.shape[0]), ("col_labels", values.shape[1])):
            labels = getattr(self, name)
            if labels is not None:
                labels = tuple(str(x) for x in labels)
                if len(labels) != size:
                    raise DataError(f"{name} has {len(labels)} entries, expected {size}")
                object.__setattr__(self, name, labels)
        object.__setattr__(self, "removed_rows", tuple(self.removed_rows))

    @property
    def shape(self):
        return self.values.shape

    @property
    def p(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]

    def counts(self):
        """Return the values as integers, checking integrality within 1e-9."""
        rounded = np.rint(self.values)
        if np.max(np.abs(self.values - rounded), initial=0.0) > INTEGRALITY_TOL:
            raise DataError("Poisson model requires integer counts")
        return rounded


def as_array(X):
    """Accept a DataMatrix or anything array-like."""
    if isinstance(X, DataMatrix):
        return X.values
    return np.asarray(X, dtype=np.float64)


def drop_zero_rows(data):
    """Remove all-zero rows, appending them to ``removed_rows``.

    Idempotent: a matrix without zero rows is returned unchanged.
    """
    keep = np.any(data.values != 0, axis=1)
    if keep.all():
        return data
    if not keep.any():
        raise DataError("matrix is empty after removing all-zero rows")
    if data.row_labels is not None:
        removed = [data.row_labels[i] for i in np.flatnonzero(~keep)]
        rows = tuple(np.asarray(data.row_labels, dtype=object)[keep])
    else:
        removed = [int(i) for i in np.flatnonzero(~keep)]
        rows = None
    return DataMatrix(
        data.values[keep],
        row_labels=rows,
        col_labels=data.col_labels,
        removed_rows=data.removed_rows + tuple(removed),
    )


@dataclass(frozen=True)
class ModelFamily:
    kind: Family
    variance: Optional[float] = None

    def __post_init__(self):
        kind = Family(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is Family.GAUSSIAN:
            if self.variance is None:
                raise ConfigError("Gaussian family requires a variance")
            object.__setattr__(self, "variance", max(float(self.variance), VARIANCE_FLOOR))
        elif self.variance is not None:
            raise ConfigError("Poisson family takes no variance")


@dataclass(frozen=True)
class Factorization:
    """Result of one NMF fit; ``history`` is the objective after every sweep."""

    T: np.ndarray
    W: np.ndarray
    k: int
    loglik: float
    model: ModelFamily
    seed: int
    iterations: int
    converged: bool
    history: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "T", _frozen_array(self.T))
        object.__setattr__(self, "W", _frozen_array(self.W))
        object.__setattr__(self, "history", _frozen_array(self.history))

    @property
    def mean(self):
        return self.T @ self.W


@dataclass(frozen=True)
class SelectionConfig:
    model: Family = Family.POISSON
    alpha: float = 0.1
    B: int = 50
    m: int = 50
    k_start: int = 1
    k_max: Optional[int] = None
    seed: int = 0
    method: Method = Method.DECON

    def __post_init__(self):
        object.__setattr__(self, "model", Family(self.model))
        object.__setattr__(self, "method", Method(self.method))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["model"] = self.model.value
        d["method"] = self.method.value
        return d


def rank_cap(p, n):
    """Largest rank that can be tested against rank + 1: floor(np/(n+p)) - 1."""
    return (p * n) // (p + n) - 1


def validate(config, data):
    """Check ``config`` against ``data`` and return it with k_max filled in."""
    if not 0 < config.alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {config.alpha}")
    if config.B < 10:
        raise ConfigError(f"bootstrap size B must be >= 10, got {config.B}")
    if config.m < 1:
        raise ConfigError(f"number of starts m must be >= 1, got {config.m}")
    p, n = data.shape
    cap = rank_cap(p, n)
    k_max = cap if config.k_max is None else min(config.k_max, cap)
    if config.k_start < 1 or config.k_start > k_max:
        raise ConfigError(
            f"k_start={config.k_start} outside [1, k_max={k_max}] for a {p}x{n} matrix"
        )
    return dataclasses.replace(config, k_max=k_max)


# --------------------------------------------------------------------------
# CSV / TSV ingestion


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_matrix(path, format=None):
    """Read a delimited matrix, dropping (and recording) all-zero rows.

    The first row and first column are treated as labels when they contain
    non-numeric cells. Numbers use a dot decimal separator.
    """
    path = Path(path)
    if format is None:
        format = "tsv" if path.suffix.lower() in (".tsv", ".tab") else "csv"
    delimiter = {"csv": ",", "tsv": "\t"}[format]
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no data")

    col_labels = None
    first = rows[0][1:] if len(rows[0]) > 1 else rows[0]
    if not all(_is_number(c) for c in first):
        col_labels = rows[0]
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: header but no data rows")
    row_labels = None
    if not all(_is_number(r[0]) for r in rows):
        row_labels = [r[0] for r in rows]
        rows = [r[1:] for r in rows]
        if col_labels is not None:
            col_labels = col_labels[1:]

    width = len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i + 1} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: cannot parse {cell!r} at cell ({i + 1}, {j + 1})") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: non-finite value at cell ({i + 1}, {j + 1})")
            if v < 0:
                raise DataError(f"{path}: negative entry {cell} at cell ({i + 1}, {j + 1})")
            values[i, j] = v
    if col_labels is not None and len(col_labels) != width:
        raise DataError(f"{path}: header has {len(col_labels)} labels for {width} columns")
    data = DataMatrix(values, row_labels=row_labels, col_labels=col_labels)
    return drop_zero_rows(data)


def _format_number(v):
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_matrix(data, path, format="csv"):
    delimiter = {"csv": ",", "tsv": "\t"}[format]
    if not isinstance(data, DataMatrix):
        data = DataMatrix(data)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        if data.col_labels is not None:
            lead = [""] if data.row_labels is not None else []
            writer.writerow(lead + list(data.col_labels))
        for i, row in enumerate(data.values):
            cells = [_format_number(v) for v in row]
            if data.row_labels is not None:
                cells = [data.row_labels[i]] + cells
            writer.writerow(cells)
