"""Synthetic benchmark, CSV ingestion and min-max scaling."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit


class DataFormatError(ValueError):
    pass


@dataclass
class DataMatrix:
    features: np.ndarray
    labels: np.ndarray | None = None
    feature_mins: np.ndarray | None = None
    feature_maxs: np.ndarray | None = None
    latent: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_labels(self) -> int | None:
        return None if self.labels is None else int(len(np.unique(self.labels)))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features, dtype=np.float64).tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels, dtype=np.int64).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SyntheticSpec:
    n_per_cluster: int = 2500
    k: int = 4
    latent_dim: int = 2
    hidden_dim: int = 10
    output_dim: int = 100
    # centers ~ N(0, center_spread^2), then scaled up until every pair is at
    # least min_separation within-cluster standard deviations apart
    center_spread: float = 5.0
    within_sd: float = 1.0
    min_separation: float = 6.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_per_cluster", "k", "latent_dim", "hidden_dim", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive count")
        if self.within_sd <= 0 or self.center_spread <= 0 or self.min_separation < 0:
            raise ValueError("spread, within_sd and min_separation must be positive")


def _latent_centers(spec: SyntheticSpec, rng) -> np.ndarray:
    centers = rng.normal(scale=spec.center_spread, size=(spec.k, spec.latent_dim))
    if spec.k > 1:
        diff = centers[:, None, :] - centers[None, :, :]
        d = np.sqrt((diff**2).sum(-1))
        closest = d[np.triu_indices(spec.k, 1)].min()
        need = spec.min_separation * spec.within_sd
        if closest < need:
            centers *= need / closest
    return centers


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> DataMatrix:
    """Planar Gaussian clusters pushed through ``x = s(U s(W z))`` with ``s``
    the logistic function and ``W``, ``U`` standard normal.

    Rows are ordered cluster by cluster; the latent ``z`` is attached for
    plotting and must not be used for training.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = _latent_centers(spec, rng)
    labels = np.repeat(np.arange(spec.k), spec.n_per_cluster)
    z = centers[labels] + rng.normal(scale=spec.within_sd, size=(len(labels), spec.latent_dim))
    W = rng.standard_normal((spec.hidden_dim, spec.latent_dim))
    U = rng.standard_normal((spec.output_dim, spec.hidden_dim))
    x = expit(expit(z @ W.T) @ U.T)
    return DataMatrix(x, labels, latent=z)


def minmax_normalize(data: DataMatrix) -> DataMatrix:
    """Scale each feature to [0, 1]; constant features become 0."""
    x = np.asarray(data.features, dtype=np.float64)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - lo) / safe, 0.0)
    return replace(data, features=out, feature_mins=lo, feature_maxs=hi)


def _parse_float(cell: str, line: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataFormatError(f"line {line}, column {col + 1}: non-numeric value {cell!r}") from None


def load_csv(path, label_column: int | str | None = None, header: bool | None = None) -> DataMatrix:
    """Read a rectangular numeric CSV.

    ``label_column`` may be a 0-based index or a header name. ``header=None``
    auto-detects a header row (first row containing a non-numeric cell).
    Labels are remapped to ``0..K-1`` in sorted order of their values.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    names = None
    if header is None:
        first = rows[0][1]
        header = any(_is_text(c) for c in first)
    if header:
        names = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise DataFormatError(f"{path}: header but no data rows")
    width = len(rows[0][1]) if names is None else len(names)
    for line, r in rows:
        if len(r) != width:
            raise DataFormatError(f"{path}: line {line} has {len(r)} fields, expected {width}")

    label_idx = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if names is None or label_column not in names:
                raise DataFormatError(f"{path}: no column named {label_column!r}")
            label_idx = names.index(label_column)
        else:
            label_idx = int(label_column) % width

    values = np.empty((len(rows), width))
    for r_i, (line, r) in enumerate(rows):
        for c_i, cell in enumerate(r):
            values[r_i, c_i] = _parse_float(cell.strip(), line, c_i)

    labels = None
    if label_idx is not None:
        raw = values[:, label_idx]
        _, labels = np.unique(raw, return_inverse=True)
        values = np.delete(values, label_idx, axis=1)
    return DataMatrix(values, labels)


def _is_text(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return True
    return False


def write_csv(path, array, header: list[str] | None = None) -> Path:
    """Write a matrix (or vector) with shortest round-trip float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(array)
    if arr.ndim == 1:
        arr = arr[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        if np.issubdtype(arr.dtype, np.integer):
            w.writerows(arr.tolist())
        else:
            w.writerows([[repr(float(v)) for v in row] for row in arr])
    return path
