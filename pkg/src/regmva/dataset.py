"""CSV ingestion and the (X, Y) matrices every solver works on.

Matrices follow the column-sample layout: ``X`` is ``n x N`` and ``Y`` is
``m x N``, so the (unscaled) covariances are plain products ``X @ X.T``.
"""
from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "DatasetError",
    "RawTable",
    "Dataset",
    "load_csv",
    "one_hot",
    "center_and_standardize",
    "drop_collinear",
    "covariances",
    "resolve_data_path",
    "load_dataset",
    "load_segment",
]

SEGMENT_TARGET = "category"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class RawTable:
    feature_names: tuple[str, ...]
    features: np.ndarray  # N x p, row per sample
    target: str
    labels: tuple[str, ...]

    @property
    def n_samples(self) -> int:
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Centered input/output matrices plus a record of the preprocessing applied."""

    X: np.ndarray
    Y: np.ndarray
    feature_names: tuple[str, ...]
    classes: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray | None = None
    zero_variance: tuple[str, ...] = ()
    dropped: tuple[str, ...] = ()
    source: str = ""
    preprocessing: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("X", "Y", "mean", "scale"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise DatasetError("X and Y must be 2-D")
        if self.X.shape[1] != self.Y.shape[1]:
            raise DatasetError(
                f"X and Y disagree on sample count ({self.X.shape[1]} vs {self.Y.shape[1]})")
        if self.N < 2 or self.n < 1 or self.m < 1:
            raise DatasetError("need N >= 2, n >= 1, m >= 1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.Y.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    def describe(self) -> str:
        prep = "center+scale" if self.scale is not None else "center"
        if self.dropped:
            prep += f", dropped {len(self.dropped)} collinear"
        return f"{self.source or 'dataset'}: n={self.n} m={self.m} N={self.N} ({prep})"


def load_csv(path, target: str, exclude=()) -> RawTable:
    """Parse a comma-separated file with a header row.

    Every column other than ``target`` (and those in ``exclude``) must be
    numeric. Parse errors name the offending row (1-based, header is row 1)
    and column.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise DatasetError(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    if target not in header:
        raise DatasetError(f"{path}: target column {target!r} not found")
    t_idx = header.index(target)
    skip = set(exclude)
    cols = [i for i, h in enumerate(header) if i != t_idx and h not in skip]
    feats = np.empty((len(rows) - 1, len(cols)))
    labels = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        for j, c in enumerate(cols):
            try:
                v = float(row[c])
            except ValueError:
                raise DatasetError(
                    f"{path}: non-numeric value {row[c]!r} at row {r}, column {header[c]!r}"
                ) from None
            if not math.isfinite(v):
                raise DatasetError(f"{path}: non-finite value at row {r}, column {header[c]!r}")
            feats[r - 2, j] = v
        labels.append(row[t_idx].strip())
    return RawTable(tuple(header[c] for c in cols), feats, target, tuple(labels))


def one_hot(labels) -> np.ndarray:
    """One row per class (lexicographic order), one column per label."""
    labels = list(labels)
    if not labels:
        raise DatasetError("one_hot needs at least one label")
    classes = sorted(set(labels))
    index = {c: i for i, c in enumerate(classes)}
    Y = np.zeros((len(classes), len(labels)))
    Y[[index[l] for l in labels], np.arange(len(labels))] = 1.0
    return Y


def drop_collinear(X, tol: float = 1e-5) -> np.ndarray:
    """Indices of rows of ``X`` kept by a greedy in-order linear-independence scan.

    A row is dropped when its least-squares residual on the rows already kept
    is at most ``tol`` times its own norm. Zero rows are always dropped.
    """
    X = np.asarray(X, dtype=float)
    keep: list[int] = []
    basis = np.zeros((X.shape[1], 0))  # orthonormal basis of kept rows
    for i, x in enumerate(X):
        norm = np.linalg.norm(x)
        if norm == 0:
            continue
        r = x - basis @ (basis.T @ x)
        r -= basis @ (basis.T @ r)  # second pass keeps the basis orthonormal
        rn = np.linalg.norm(r)
        if rn > tol * norm:
            keep.append(i)
            basis = np.column_stack([basis, r / rn])
    return np.array(keep, dtype=int)


def center_and_standardize(table: RawTable, standardize: bool = False,
                           drop_collinear_features: bool = False,
                           collinear_tol: float = 1e-5) -> Dataset:
    """Build a :class:`Dataset` from a parsed table.

    Features are centered; with ``standardize`` they are also scaled to unit
    sample variance (constant features stay centered, are reported in
    ``zero_variance`` and trigger a warning). Labels are one-hot encoded and
    row-centered. ``drop_collinear_features`` removes features that are linear
    combinations of earlier ones, which otherwise leave ``C_XX`` singular.
    """
    X = np.asarray(table.features, dtype=float).T.copy()
    names = list(table.feature_names)
    mean = X.mean(axis=1)
    X -= mean[:, None]
    scale = None
    zero_var: list[str] = []
    if standardize:
        sd = X.std(axis=1, ddof=1) if X.shape[1] > 1 else np.zeros(X.shape[0])
        zero = sd <= 1e-12 * max(1.0, float(np.max(np.abs(mean), initial=0.0)))
        zero_var = [names[i] for i in np.flatnonzero(zero)]
        if zero_var:
            warnings.warn(f"zero-variance features left centered: {zero_var}", RuntimeWarning,
                          stacklevel=2)
        scale = np.where(zero, 1.0, sd)
        X /= scale[:, None]
    dropped: list[str] = []
    if drop_collinear_features:
        keep = drop_collinear(X, collinear_tol)
        dropped = [names[i] for i in range(len(names)) if i not in set(keep)]
        X = X[keep]
        mean = mean[keep]
        scale = None if scale is None else scale[keep]
        names = [names[i] for i in keep]
    Y = one_hot(table.labels)
    Y -= Y.mean(axis=1, keepdims=True)
    classes = tuple(sorted(set(table.labels)))
    prep = {"standardize": bool(standardize), "drop_collinear": bool(drop_collinear_features),
            "dropped": dropped, "zero_variance": zero_var}
    return Dataset(X, Y, tuple(names), classes, mean, scale, tuple(zero_var), tuple(dropped),
                   preprocessing=prep)


def covariances(d: Dataset):
    """Unscaled sample covariances ``(C_XX, C_YY, C_XY)``."""
    X, Y = d.X, d.Y
    Cxx = X @ X.T
    Cyy = Y @ Y.T
    Cxy = X @ Y.T
    return 0.5 * (Cxx + Cxx.T), 0.5 * (Cyy + Cyy.T), Cxy


def resolve_data_path(path) -> Path:
    """Locate a dataset file.

    Tries ``path`` as given, then the directory named by ``MVA_DATA_DIR``
    (default ``./data``), then the copies shipped with the package.
    """
    p = Path(path)
    if p.exists():
        return p
    cache = Path(os.environ.get("MVA_DATA_DIR", "data")) / p.name
    if cache.exists():
        return cache
    bundled = resources.files("regmva") / "data" / p.name
    if bundled.is_file():
        return Path(str(bundled))
    raise DatasetError(f"dataset {path} not found (also looked in {cache.parent})")


def load_dataset(path, target: str, standardize: bool = False,
                 drop_collinear_features: bool = True) -> Dataset:
    resolved = resolve_data_path(path)
    table = load_csv(resolved, target)
    d = center_and_standardize(table, standardize, drop_collinear_features)
    return Dataset(d.X, d.Y, d.feature_names, d.classes, d.mean, d.scale, d.zero_variance,
                   d.dropped, source=str(resolved.name), preprocessing=d.preprocessing)


def load_segment(standardize: bool = False, drop_collinear_features: bool = True) -> Dataset:
    """UCI Image Segmentation (2310 samples, 18 features, 7 classes)."""
    return load_dataset("segment.csv", SEGMENT_TARGET, standardize, drop_collinear_features)
