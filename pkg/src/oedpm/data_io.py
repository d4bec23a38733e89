"""Dataset ingestion, standardisation, metrics and report serialisation."""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    DataError,
    MissingFileError,
    MissingLabelColumnError,
    NonNumericCellError,
    RaggedRowError,
    UsageError,
)

STD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    feature_names: tuple | None = None
    source: str | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"features must be a non-empty N x p matrix, got {X.shape}")
        object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (X.shape[0],):
                raise DataError(f"{y.shape[0]} labels for {X.shape[0]} rows")
            if not np.all(np.isin(y, (0, 1))):
                raise DataError("labels must be 0/1")
            object.__setattr__(self, "labels", y.astype(np.int8))

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def outlier_fraction(self):
        return None if self.labels is None else float(np.mean(self.labels))


def _parse_float(cell, row, col):
    try:
        return float(cell)
    except ValueError:
        raise NonNumericCellError(
            f"non-numeric cell {cell!r} at row {row}, column {col}", row=row, column=col
        ) from None


def load_csv(path, has_header=True, label_column=None, delimiter=","):
    """Read a numeric CSV, optionally splitting off a binary label column.

    Parameters
    ----------
    path : str or PathLike
    has_header : bool
        Whether the first record holds column names.
    label_column : str or int, optional
        Column name (requires a header) or zero-based index. Non-zero label
        values are mapped to 1 (outlier).
    delimiter : str

    Raises
    ------
    MissingFileError, RaggedRowError, NonNumericCellError, MissingLabelColumnError
        Row numbers in messages are 1-based file lines.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFileError(f"no such file: {path}")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            records = [r for r in csv.reader(fh, delimiter=delimiter) if r]
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    header = None
    first_line = 1
    if has_header:
        if not records:
            raise DataError(f"{path} is empty")
        header = [h.strip() for h in records[0]]
        records = records[1:]
        first_line = 2
    if not records:
        raise DataError(f"{path} has no data rows")

    width = len(header) if header is not None else len(records[0])
    for i, rec in enumerate(records):
        if len(rec) != width:
            raise RaggedRowError(
                f"{path}: line {i + first_line} has {len(rec)} fields, expected {width}")

    label_idx = None
    if label_column is not None:
        if isinstance(label_column, (int, np.integer)):
            label_idx = int(label_column)
            if not -width <= label_idx < width:
                raise MissingLabelColumnError(f"label column index {label_column} out of range")
            label_idx %= width
        elif header is not None and label_column in header:
            label_idx = header.index(label_column)
        elif header is None and str(label_column).lstrip("-").isdigit():
            return load_csv(path, has_header, int(label_column), delimiter)
        else:
            raise MissingLabelColumnError(f"label column {label_column!r} not found in {path}")

    values = np.empty((len(records), width))
    for i, rec in enumerate(records):
        for j, cell in enumerate(rec):
            values[i, j] = _parse_float(cell.strip(), i + first_line, j + 1)
    if not np.all(np.isfinite(values)):
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise NonNumericCellError(
            f"non-finite value at row {i + first_line}, column {j + 1}",
            row=int(i + first_line), column=int(j + 1))

    labels = None
    names = tuple(header) if header is not None else None
    if label_idx is not None:
        labels = (values[:, label_idx] != 0).astype(np.int8)
        values = np.delete(values, label_idx, axis=1)
        if names is not None:
            names = names[:label_idx] + names[label_idx + 1:]
    if values.shape[1] == 0:
        raise DataError(f"{path} has no feature columns")
    return Dataset(values, labels, names, path)


def _format_value(v):
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def write_csv(dataset, path, label_column="outlier"):
    """Write a Dataset back to CSV; values use the shortest exact decimal form."""
    p = dataset.n_features
    names = list(dataset.feature_names or [f"x{j + 1}" for j in range(p)])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ([label_column] if dataset.labels is not None else []))
        for i, row in enumerate(dataset.features):
            out = [_format_value(v) for v in row]
            if dataset.labels is not None:
                out.append(str(int(dataset.labels[i])))
            w.writerow(out)


@dataclass(frozen=True, eq=False)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray

    def transform(self, features):
        return apply_standardizer(features, self)


def fit_standardizer(features):
    """Column means and population standard deviations; near-zero stds become 1."""
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise UsageError(f"need at least one row, got shape {X.shape}")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds < STD_FLOOR, 1.0, stds)
    means.setflags(write=False)
    stds.setflags(write=False)
    return Standardizer(means, stds)


def apply_standardizer(features, standardizer):
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != standardizer.means.shape[0]:
        raise UsageError(
            f"expected {standardizer.means.shape[0]} columns, got shape {X.shape}")
    return (X - standardizer.means) / standardizer.stds


def _ratio(a, b):
    return a / b if b else 0.0


def evaluate(report, labels):
    """Precision, recall and F1 of the outlier class (any 0/0 is taken as 0).

    ``report`` may be a DetectionReport or a 0/1 prediction vector.
    """
    pred = np.asarray(getattr(report, "memberships", report)).astype(int)
    y = np.asarray(labels).astype(int)
    if pred.shape != y.shape:
        raise UsageError(f"{pred.shape[0]} predictions for {y.shape[0]} labels")
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1,
            "tp": tp, "fp": fp, "fn": fn, "tn": tn}


def report_to_dict(report):
    return {
        "ensemble_size": int(report.ensemble_size),
        "scores": [float(s) for s in report.scores],
        "memberships": [int(v) for v in report.memberships],
        "votes": [int(v) for v in report.votes],
        "thresholds": [float(t) for t in report.thresholds],
        "config": report.config,
        "metrics": report.metrics,
    }


def write_report(report, path, format="csv"):
    """Write per-instance scores as CSV or the full report as JSON.

    CSV has the header ``index,score,is_outlier`` and scores with 6 decimals.
    Output bytes depend only on the report contents.
    """
    path = os.fspath(path)
    try:
        if format == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write("index,score,is_outlier\n")
                for i, (s, m) in enumerate(zip(report.scores, report.memberships)):
                    fh.write(f"{i},{s:.6f},{int(m)}\n")
        elif format == "json":
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
                fh.write("\n")
        else:
            raise UsageError(f"unknown report format {format!r}")
    except OSError as exc:
        raise DataError(f"cannot write report to {path}: {exc}") from exc


def read_report_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
