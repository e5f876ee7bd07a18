"""Labeled datasets and their CSV form (header ``f0,...,fn,label``)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    classification: bool = True

    def __post_init__(self):
        self.X = np.ascontiguousarray(np.atleast_2d(np.asarray(self.X, dtype=np.float64)))
        self.y = np.asarray(self.y)
        if self.classification:
            self.y = self.y.astype(np.int64)
        if self.X.shape[0] != self.y.shape[0]:
            raise DatasetError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} labels")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if self.classification and len(self) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.classification)


def write_dataset_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(ds.n_features)] + ["label"])
        for row, label in zip(ds.X, ds.y):
            lab = str(int(label)) if ds.classification else repr(float(label))
            w.writerow([repr(float(v)) for v in row] + [lab])


def _number(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DatasetError(f"non-numeric value {cell!r} in column {col}", row=row) from None
    if math.isnan(v) or math.isinf(v):
        raise DatasetError(f"non-finite value in column {col}", row=row)
    return v


def load_dataset_csv(path) -> Dataset:
    """Read a dataset; integer-looking labels make it a classification set."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DatasetError("missing header", row=1)
        header = [h.strip() for h in header]
        n_feat = len(header) - 1
        if n_feat < 1 or header[-1] != "label" or header[:-1] != [f"f{i}" for i in range(n_feat)]:
            raise DatasetError(f"header must be f0..f{{n}},label, got {header}", row=1)
        rows, labels, raw_labels = [], [], []
        for rownum, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != n_feat + 1:
                raise DatasetError(f"expected {n_feat + 1} cells, got {len(cells)}", row=rownum)
            rows.append([_number(c, rownum, header[i]) for i, c in enumerate(cells[:-1])])
            raw_labels.append(cells[-1].strip())
            labels.append(_number(cells[-1], rownum, "label"))
    if not rows:
        raise DatasetError("dataset has no rows")
    classification = all(_is_int_literal(s) for s in raw_labels)
    y = np.array(labels)
    if classification:
        if y.min() < 0:
            raise DatasetError("class labels must be non-negative")
        y = y.astype(np.int64)
    return Dataset(np.array(rows), y, classification)


def _is_int_literal(s: str) -> bool:
    try:
        int(s)
    except ValueError:
        return False
    return True
