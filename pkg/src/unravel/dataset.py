"""Tabular data ingestion and preprocessing.

The pipeline drops rows with missing cells, replaces each categorical value
by its relative frequency, standardizes every column to mean 0 / std 1
(population convention), and extracts the per-feature deviations that set the
engine's search box and the acquisition's shift scale.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DatasetError",
    "TabularDataset",
    "FeatureStats",
    "MISSING_MARKERS",
    "load_csv",
    "frequency_encode_column",
    "feature_stats",
    "preprocess",
]

MISSING_MARKERS = ("", "NA")


class DatasetError(ValueError):
    """Malformed or degenerate tabular input."""


@dataclass
class TabularDataset:
    """Feature table, optionally with a held-aside target column.

    ``rows`` is an object array straight after loading (strings for
    categorical cells, floats for numeric, None for missing) and a float
    matrix after preprocessing.  ``categorical_mask`` describes the current
    columns, so it is all-False on preprocessed output; ``encoded_mask``
    records which columns were frequency-encoded.  ``raw_mean``/``raw_sigma``
    hold the pre-standardization column statistics needed to map points back
    to the original scale.
    """

    feature_names: list[str]
    rows: np.ndarray
    targets: np.ndarray | None
    categorical_mask: np.ndarray
    encoded_mask: np.ndarray | None = None
    raw_mean: np.ndarray | None = None
    raw_sigma: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature deviations sigma_D, their mean, and column means."""

    sigma_per_feature: np.ndarray
    sigma_bar: float
    mean_per_feature: np.ndarray

    def __post_init__(self):
        sig = np.asarray(self.sigma_per_feature, dtype=float).ravel()
        mean = np.asarray(self.mean_per_feature, dtype=float).ravel()
        object.__setattr__(self, "sigma_per_feature", sig)
        object.__setattr__(self, "mean_per_feature", mean)
        if sig.shape != mean.shape:
            raise DatasetError("sigma and mean vectors must be equal length")
        if not np.all(np.isfinite(sig)) or not np.all(sig > 0):
            raise DatasetError("every per-feature sigma must be finite and > 0")
        if not math.isclose(self.sigma_bar, float(np.mean(sig)),
                            rel_tol=0.0, abs_tol=1e-12):
            raise DatasetError("sigma_bar must equal mean(sigma_per_feature)")


def _parse_cell(cell: str):
    """None for missing, float for finite numerics, the string otherwise."""
    if cell in MISSING_MARKERS:
        return None
    try:
        v = float(cell)
    except ValueError:
        return cell
    return v if math.isfinite(v) else cell


def load_csv(path: str, target_column: str | None = None) -> TabularDataset:
    """Read a headered CSV into an unprocessed dataset.

    A column is flagged categorical when any non-missing cell fails to parse
    as a finite number.  Missing cells (empty or the literal NA) survive as
    None until preprocessing drops their rows.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DatasetError(f"{path}: empty file, header row required")
            records = list(reader)
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}")

    for i, rec in enumerate(records):
        if len(rec) != len(header):
            raise DatasetError(
                f"{path}: row {i + 2} has {len(rec)} cells, expected {len(header)}")

    target_idx = None
    if target_column is not None:
        if target_column not in header:
            raise DatasetError(f"{path}: target column '{target_column}' not found")
        target_idx = header.index(target_column)
    feature_idx = [j for j in range(len(header)) if j != target_idx]
    if not feature_idx:
        raise DatasetError(f"{path}: no feature columns besides the target")
    if len(records) < 2:
        raise DatasetError(f"{path}: need at least 2 data rows, got {len(records)}")

    cells = [[_parse_cell(rec[j]) for j in feature_idx] for rec in records]
    rows = np.empty((len(records), len(feature_idx)), dtype=object)
    for i, row in enumerate(cells):
        rows[i, :] = row
    categorical = np.array(
        [any(isinstance(v, str) for v in rows[:, j]) for j in range(rows.shape[1])])

    targets = None
    if target_idx is not None:
        raw = [_parse_cell(rec[target_idx]) for rec in records]
        if all(isinstance(v, float) for v in raw):
            targets = np.array(raw, dtype=float)
        else:
            targets = np.array(raw, dtype=object)

    return TabularDataset(
        feature_names=[header[j] for j in feature_idx],
        rows=rows,
        targets=targets,
        categorical_mask=categorical,
    )


def frequency_encode_column(values: list) -> np.ndarray:
    """Replace each value by count(value)/n over the given column."""
    n = len(values)
    if n == 0:
        raise DatasetError("cannot encode an empty column")
    counts = Counter(values)
    return np.array([counts[v] / n for v in values], dtype=float)


def feature_stats(rows: np.ndarray) -> FeatureStats:
    """Column means and population standard deviations of a float matrix."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise DatasetError("need a 2-D matrix with at least 2 rows")
    sigma = rows.std(axis=0)
    if np.any(sigma < 1e-15):
        bad = int(np.argmin(sigma))
        raise DatasetError(f"column {bad} is constant (sigma=0)")
    return FeatureStats(sigma_per_feature=sigma,
                        sigma_bar=float(np.mean(sigma)),
                        mean_per_feature=rows.mean(axis=0))


def preprocess(ds: TabularDataset) -> tuple[TabularDataset, FeatureStats]:
    """Drop incomplete rows, frequency-encode, standardize, extract stats.

    The returned FeatureStats describes the standardized matrix (deviations
    all ~1); the raw-scale statistics are retained on the dataset.
    """
    if ds.n < 2:
        raise DatasetError("need at least 2 rows to preprocess")

    complete = np.array([all(v is not None for v in ds.rows[i, :])
                         for i in range(ds.n)])
    kept = ds.rows[complete, :]
    if kept.shape[0] == 0:
        raise DatasetError("every row has missing cells; nothing left")
    if kept.shape[0] < 2:
        raise DatasetError("fewer than 2 complete rows after dropping missing")

    d = kept.shape[1]
    encoded = np.empty(kept.shape, dtype=float)
    for j in range(d):
        col = list(kept[:, j])
        if ds.categorical_mask[j]:
            encoded[:, j] = frequency_encode_column(col)
        else:
            encoded[:, j] = np.array(col, dtype=float)
    if not np.all(np.isfinite(encoded)):
        raise DatasetError("non-finite value survived encoding")

    raw = feature_stats(encoded)  # rejects constant columns
    standardized = (encoded - raw.mean_per_feature) / raw.sigma_per_feature
    stats = feature_stats(standardized)

    targets = None
    if ds.targets is not None:
        targets = ds.targets[complete]

    out = TabularDataset(
        feature_names=list(ds.feature_names),
        rows=standardized,
        targets=targets,
        categorical_mask=np.zeros(d, dtype=bool),
        encoded_mask=ds.categorical_mask.copy(),
        raw_mean=raw.mean_per_feature,
        raw_sigma=raw.sigma_per_feature,
    )
    return out, stats
