"""Feature tables and their CSV form.

Columns are ``f1..fN`` (features), ``k1..kL`` (conditions), an optional
``label`` column with values ``ref``/``anom`` and an optional ``id`` column.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cae import FeatureRecord
from .errors import DimensionError, NumericInputError

LABELS = ("ref", "anom")


@dataclass
class Dataset:
    features: np.ndarray
    conditions: np.ndarray
    labels: np.ndarray | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.conditions = np.atleast_2d(np.asarray(self.conditions, dtype=np.float64))
        if len(self.features) != len(self.conditions):
            raise DimensionError("features and conditions differ in row count")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=object)
        if self.ids is None:
            self.ids = np.array([str(i) for i in range(len(self.features))], dtype=object)
        else:
            self.ids = np.asarray(self.ids, dtype=object)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_conditions(self) -> int:
        return self.conditions.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.features[rows], self.conditions[rows],
                       None if self.labels is None else self.labels[rows], self.ids[rows])

    def records(self):
        for i in range(len(self)):
            yield FeatureRecord(self.features[i], self.conditions[i],
                                None if self.labels is None else self.labels[i])

    def with_class(self, label: str) -> "Dataset":
        if self.labels is None:
            raise ValueError("dataset has no labels")
        return self.subset(np.flatnonzero(self.labels == label))

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        labels = None
        if all(p.labels is not None for p in parts):
            labels = np.concatenate([p.labels for p in parts])
        return Dataset(np.vstack([p.features for p in parts]), np.vstack([p.conditions for p in parts]),
                       labels, np.concatenate([p.ids for p in parts]))


def write_csv(ds: Dataset, path) -> None:
    header = [f"f{i + 1}" for i in range(ds.n_features)] + [f"k{j + 1}" for j in range(ds.n_conditions)]
    with_labels = ds.labels is not None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + header + (["label"] if with_labels else []))
        for i in range(len(ds)):
            row = [ds.ids[i]] + [repr(float(v)) for v in ds.features[i]] + [repr(float(v)) for v in ds.conditions[i]]
            if with_labels:
                row.append(ds.labels[i])
            w.writerow(row)


def _indexed(header: list[str], prefix: str) -> list[int]:
    cols = {}
    for pos, name in enumerate(header):
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            cols[int(name[len(prefix):])] = pos
    if sorted(cols) != list(range(1, len(cols) + 1)):
        raise DimensionError(f"columns {prefix}1..{prefix}n must be contiguous, found {sorted(cols)}")
    return [cols[i] for i in range(1, len(cols) + 1)]


def read_csv(path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DimensionError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    fcols, kcols = _indexed(header, "f"), _indexed(header, "k")
    if not fcols or not kcols:
        raise DimensionError(f"{path}: need at least one f column and one k column")
    lcol = header.index("label") if "label" in header else None
    icol = header.index("id") if "id" in header else None
    n = len(rows) - 1
    x = np.empty((n, len(fcols)))
    k = np.empty((n, len(kcols)))
    labels = [] if lcol is not None else None
    ids = []
    for r, row in enumerate(rows[1:]):
        line = r + 2
        if len(row) != len(header):
            raise DimensionError(f"{path}:{line}: expected {len(header)} cells, got {len(row)}")
        for dest, cols in ((x, fcols), (k, kcols)):
            for j, c in enumerate(cols):
                try:
                    v = float(row[c])
                except ValueError:
                    raise NumericInputError(f"{path}: row {line}, column {header[c]}: cannot parse {row[c]!r}") from None
                if not math.isfinite(v):
                    raise NumericInputError(f"{path}: row {line}, column {header[c]}: non-finite value {row[c]!r}")
                dest[r, j] = v
        if lcol is not None:
            lab = row[lcol].strip()
            if lab not in LABELS:
                raise NumericInputError(f"{path}: row {line}, column label: expected one of {LABELS}, got {lab!r}")
            labels.append(lab)
        ids.append(row[icol] if icol is not None else str(r))
    return Dataset(x, k, None if labels is None else np.array(labels, dtype=object), np.array(ids, dtype=object))
