"""Service datasets in the ``smd_style`` directory layout.

Every service ``<id>`` contributes three headerless CSV files::

    <id>_train.csv   one row per timestamp, one column per feature
    <id>_test.csv    same columns as train
    <id>_labels.csv  one 0/1 per line, aligned with the test rows
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import DataError, as_matrix


@dataclass(frozen=True)
class ServiceDataset:
    service_id: str
    train: np.ndarray  # [m_feat, T_train]
    test: np.ndarray  # [m_feat, T_test]
    labels: np.ndarray  # [T_test] of 0/1

    def __post_init__(self):
        train, test = as_matrix(self.train), as_matrix(self.test)
        labels = np.asarray(self.labels).reshape(-1)
        if train.shape[0] != test.shape[0]:
            raise DataError(
                f"service {self.service_id}: train has {train.shape[0]} features, test has {test.shape[0]}"
            )
        if labels.size != test.shape[1]:
            raise DataError(
                f"service {self.service_id}: {labels.size} labels for {test.shape[1]} test timestamps"
            )
        if not np.isin(labels, (0, 1)).all():
            raise DataError(f"service {self.service_id}: labels must be 0 or 1")
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", test)
        object.__setattr__(self, "labels", labels.astype(np.int8))

    @property
    def m_feat(self) -> int:
        return self.train.shape[0]


def read_matrix(path: Path) -> np.ndarray:
    """Headerless CSV of reals, returned feature-major ``[m_feat, T]``."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: ragged row with {len(row)} fields, expected {width}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise DataError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    x = np.array(rows).T
    if not np.isfinite(x).all():
        t, f = np.argwhere(~np.isfinite(x.T))[0]
        raise DataError(f"{path}:{t + 1}: non-finite value in column {f}")
    return x


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_labels(path: Path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {line!r}")
            out.append(int(line))
    return np.array(out, dtype=np.int8)


def load_dataset(root_path: str | Path, layout: str = "smd_style") -> list[ServiceDataset]:
    """Load every service under ``root_path``, sorted by id."""
    if layout != "smd_style":
        raise DataError(f"unsupported layout {layout!r}")
    root = Path(root_path)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    ids = sorted(p.name[: -len("_train.csv")] for p in root.glob("*_train.csv"))
    if not ids:
        raise DataError(f"{root}: no <id>_train.csv files")
    out = []
    for sid in ids:
        paths = {part: root / f"{sid}_{part}.csv" for part in ("train", "test", "labels")}
        for p in paths.values():
            if not p.is_file():
                raise DataError(f"missing file {p}")
        out.append(
            ServiceDataset(
                sid, read_matrix(paths["train"]), read_matrix(paths["test"]), read_labels(paths["labels"])
            )
        )
    return out


def write_dataset(root_path: str | Path, datasets: Sequence[ServiceDataset]) -> None:
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    for ds in datasets:
        for part, mat in (("train", ds.train), ("test", ds.test)):
            with open(root / f"{ds.service_id}_{part}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerows([[repr(float(v)) for v in row] for row in mat.T])
        (root / f"{ds.service_id}_labels.csv").write_text("".join(f"{int(v)}\n" for v in ds.labels))


def group_services(datasets: Sequence, size: int = 10) -> list[list]:
    """Consecutive runs of ``size`` services; the last run may be shorter."""
    if size < 1:
        raise DataError(f"group size must be >= 1, got {size}")
    items = list(datasets)
    return [items[i:i + size] for i in range(0, len(items), size)]
