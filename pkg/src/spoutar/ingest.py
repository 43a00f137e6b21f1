"""Delimited-text ingestion, period split and preprocessing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .factorization import PairedDataset


class IngestError(ValueError):
    """Malformed or unusable input data."""


@dataclass
class IngestSpec:
    """How to turn a CSV file into a two-period dataset.

    ``split`` is ``"none"`` (one period), an integer ``K`` (the first ``K``
    time points form period 1), or ``"A:B,C:D"`` with inclusive ISO date
    bounds matched against ``date_column``.  Log-differencing happens after
    the split, so each period loses its first time point.
    """

    path: str
    orientation: str = "rows-are-time"
    split: str = "none"
    preprocess: str = "none"
    header: bool = True
    date_column: str | int | None = None
    standardize: bool = False

    def __post_init__(self):
        if self.orientation not in ("rows-are-time", "rows-are-variables"):
            raise IngestError(f"unknown orientation {self.orientation!r}")
        if self.preprocess not in ("none", "log-diff"):
            raise IngestError(f"unknown preprocessing {self.preprocess!r}")


@dataclass
class IngestResult:
    data: PairedDataset
    names: list[str]
    time_labels: list[list[str]]
    scaling: dict = field(default_factory=dict)


def _parse_float(cell: str, line: int, col: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise IngestError(f"line {line}, column {col + 1}: non-numeric cell {cell!r}") from None
    if not math.isfinite(v):
        raise IngestError(f"line {line}, column {col + 1}: non-finite value {cell!r}")
    return v


def _read_rows(path) -> list[tuple[int, list[str]]]:
    rows = []
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((line, [c.strip() for c in row]))
    if not rows:
        raise IngestError(f"{path}: no data")
    width = len(rows[0][1])
    for line, row in rows:
        if len(row) != width:
            raise IngestError(f"line {line}: expected {width} fields, found {len(row)} (ragged row)")
    return rows


def _load_matrix(spec: IngestSpec):
    """Return ``(values p x n, variable names, time labels)``."""
    rows = _read_rows(spec.path)
    if spec.orientation == "rows-are-time":
        head = rows[0][1] if spec.header else None
        body = rows[1:] if spec.header else rows
        width = len(rows[0][1])
        date_idx = None
        if spec.date_column is not None:
            if isinstance(spec.date_column, int) or str(spec.date_column).isdigit():
                date_idx = int(spec.date_column)
            elif head is not None and spec.date_column in head:
                date_idx = head.index(spec.date_column)
            else:
                raise IngestError(f"date column {spec.date_column!r} not found")
        var_cols = [c for c in range(width) if c != date_idx]
        names = [head[c] for c in var_cols] if head else [f"V{k}" for k in range(len(var_cols))]
        vals = np.array([[_parse_float(row[c], line, c) for c in var_cols] for line, row in body])
        labels = [row[date_idx] for _, row in body] if date_idx is not None else [str(t) for t in range(len(body))]
        return vals.T.reshape(len(var_cols), len(body)), names, labels
    # rows-are-variables: first column holds names when a header row is present
    if spec.header:
        labels = rows[0][1][1:]
        names = [row[0] for _, row in rows[1:]]
        vals = np.array([[_parse_float(c, line, k + 1) for k, c in enumerate(row[1:])] for line, row in rows[1:]])
    else:
        labels = [str(t) for t in range(len(rows[0][1]))]
        names = [f"V{k}" for k in range(len(rows))]
        vals = np.array([[_parse_float(c, line, k) for k, c in enumerate(row)] for line, row in rows])
    return vals.reshape(len(names), len(labels)), names, labels


def _split(vals, labels, rule: str):
    rule = str(rule).strip()
    n = vals.shape[1]
    if rule in ("", "none"):
        return [(vals, labels)]
    if rule.lstrip("-").isdigit():
        k = int(rule)
        if not 0 < k < n:
            raise IngestError(f"split index {k} outside (0, {n})")
        return [(vals[:, :k], labels[:k]), (vals[:, k:], labels[k:])]
    try:
        ranges = [tuple(part.split(":")) for part in rule.split(",")]
        if len(ranges) != 2 or any(len(r) != 2 for r in ranges):
            raise ValueError
    except ValueError:
        raise IngestError(f"split rule {rule!r} is neither an index nor 'start:end,start:end'") from None
    out = []
    for lo, hi in ranges:
        keep = [t for t, lab in enumerate(labels) if lo <= lab <= hi]
        if not keep:
            raise IngestError(f"no time points between {lo} and {hi}")
        out.append((vals[:, keep], [labels[t] for t in keep]))
    return out


def log_diff(vals: np.ndarray, names, labels) -> np.ndarray:
    bad = np.argwhere(~(vals > 0))
    if bad.size:
        i, t = bad[0]
        raise IngestError(
            f"log-diff needs positive values: variable {names[i]!r} at time index {t} "
            f"({labels[t]}) is {vals[i, t]!r}")
    return np.diff(np.log(vals), axis=1)


def ingest(spec: IngestSpec, min_length: int = 1) -> IngestResult:
    """Read, split and preprocess; each period must keep more than ``min_length`` points."""
    vals, names, labels = _load_matrix(spec)
    periods = _split(vals, labels, spec.split)
    out, out_labels = [], []
    for y, lab in periods:
        if spec.preprocess == "log-diff":
            y = log_diff(y, names, lab)
            lab = lab[1:]
        out.append(y)
        out_labels.append(list(lab))
    for k, y in enumerate(out, start=1):
        if y.shape[1] <= min_length:
            raise IngestError(f"period {k} has {y.shape[1]} time points after preprocessing; need more than {min_length}")
    scaling = {}
    if spec.standardize:
        pooled = np.hstack(out)
        mean = pooled.mean(axis=1)
        sd = pooled.std(axis=1)
        if np.any(sd == 0):
            raise IngestError(f"cannot standardize constant variable(s) {[names[i] for i in np.flatnonzero(sd == 0)]}")
        out = [(y - mean[:, None]) / sd[:, None] for y in out]
        scaling = {"mean": mean.tolist(), "sd": sd.tolist()}
    data = PairedDataset(out[0], out[1] if len(out) > 1 else None)
    return IngestResult(data, names, out_labels, scaling)


def write_matrix_csv(path, y: np.ndarray, names, labels=None) -> None:
    """Rows-are-time CSV with a header; values at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["time"] if labels is not None else []) + list(names))
        for t in range(y.shape[1]):
            lead = [labels[t]] if labels is not None else []
            w.writerow(lead + [format(v, ".17g") for v in y[:, t]])
