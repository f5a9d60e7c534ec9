"""CSV readers and writers for matrices, panels, ticks, partitions and histories.

Floats are written with 17 significant digits so that a value survives a
write/read round trip exactly and golden files stay byte-stable.
"""

from __future__ import annotations

import csv
from typing import Iterable, Sequence

import numpy as np

from .errors import CsvParseError
from .preprocess import TickSeries

__all__ = [
    "format_float",
    "read_bar_csv",
    "read_matrix_csv",
    "read_panel_csv",
    "read_partition_csv",
    "read_tick_csv",
    "write_history_csv",
    "write_matrix_csv",
    "write_panel_csv",
    "write_partition_csv",
]


def format_float(x: float) -> str:
    if np.isnan(x):
        return ""
    return "%.17g" % x


def _write_rows(path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except csv.Error as exc:
        raise CsvParseError(path, 0, 0, str(exc)) from exc
    if not rows:
        raise CsvParseError(path, 1, 1, "file is empty")
    return rows


def _float(path, row: int, col: int, text: str, allow_missing: bool = False) -> float:
    text = text.strip()
    if text == "" and allow_missing:
        return float("nan")
    try:
        v = float(text)
    except ValueError:
        raise CsvParseError(path, row, col, f"not a number: {text!r}") from None
    if not np.isfinite(v):
        raise CsvParseError(path, row, col, f"non-finite value: {text!r}")
    return v


def _labelled_block(path, allow_missing: bool = False) -> tuple[list[str], list[str], np.ndarray]:
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "asset_id":
        raise CsvParseError(path, 1, 1, "first header cell must be 'asset_id'")
    width = len(header)
    names, data = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise CsvParseError(path, r, min(len(row), width) + 1, f"expected {width} columns, found {len(row)}")
        names.append(row[0].strip())
        data.append([_float(path, r, k + 2, cell, allow_missing) for k, cell in enumerate(row[1:])])
    mat = np.array(data, dtype=np.float64).reshape(len(names), width - 1)
    return header[1:], names, mat


def write_matrix_csv(path, matrix, labels: Sequence[str] | None = None) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    names = [str(x) for x in labels] if labels is not None else [f"A{i}" for i in range(m.shape[0])]
    _write_rows(path, ["asset_id", *names], ([names[i], *map(format_float, m[i])] for i in range(m.shape[0])))


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Square correlation matrix with matching row and column labels."""
    cols, names, mat = _labelled_block(path)
    if len(cols) != len(names):
        raise CsvParseError(path, 1, len(cols) + 1, f"{len(cols)} columns but {len(names)} rows; matrix must be square")
    for k, (a, b) in enumerate(zip(cols, names)):
        if a != b:
            raise CsvParseError(path, k + 2, 1, f"row label {b!r} does not match column label {a!r}")
    return names, mat


def write_panel_csv(path, panel, labels: Sequence[str] | None = None) -> None:
    x = np.asarray(panel, dtype=np.float64)
    names = [str(v) for v in labels] if labels is not None else [f"A{i}" for i in range(x.shape[0])]
    header = ["asset_id", *(str(t) for t in range(x.shape[1]))]
    _write_rows(path, header, ([names[i], *map(format_float, x[i])] for i in range(x.shape[0])))


def read_panel_csv(path) -> tuple[list[str], np.ndarray]:
    _, names, mat = _labelled_block(path)
    return names, mat


def read_bar_csv(path) -> tuple[list[str], np.ndarray]:
    """Assets x bars price matrix; empty cells mark bars without a tick."""
    _, names, mat = _labelled_block(path, allow_missing=True)
    return names, mat


def read_tick_csv(path) -> TickSeries:
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    if header != ["asset_id", "timestamp_ms", "midprice"]:
        raise CsvParseError(path, 1, 1, "header must be asset_id,timestamp_ms,midprice")
    records = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise CsvParseError(path, r, min(len(row), 3) + 1, f"expected 3 columns, found {len(row)}")
        try:
            ts = int(row[1].strip())
        except ValueError:
            raise CsvParseError(path, r, 2, f"not an integer timestamp: {row[1]!r}") from None
        price = _float(path, r, 3, row[2])
        if price <= 0:
            raise CsvParseError(path, r, 3, f"price must be positive, got {row[2]!r}")
        records.append((row[0].strip(), ts, price))
    try:
        return TickSeries.from_records(records)
    except ValueError as exc:
        raise CsvParseError(path, 0, 0, str(exc)) from exc


def write_partition_csv(path, labels: Sequence[str], partition) -> None:
    _write_rows(path, ["asset_id", "cluster_label"], ([str(a), str(int(p))] for a, p in zip(labels, partition)))


def read_partition_csv(path) -> tuple[list[str], np.ndarray]:
    rows = _read_rows(path)
    if [h.strip() for h in rows[0]] != ["asset_id", "cluster_label"]:
        raise CsvParseError(path, 1, 1, "header must be asset_id,cluster_label")
    names, labs = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise CsvParseError(path, r, min(len(row), 2) + 1, f"expected 2 columns, found {len(row)}")
        try:
            labs.append(int(row[1]))
        except ValueError:
            raise CsvParseError(path, r, 2, f"not an integer label: {row[1]!r}") from None
        names.append(row[0].strip())
    return names, np.array(labs, dtype=np.int64)


def write_history_csv(path, history) -> None:
    h = np.asarray(history, dtype=np.float64)
    _write_rows(
        path,
        ["generation", "best", "mean", "std"],
        ([str(g), *map(format_float, h[g])] for g in range(h.shape[0])),
    )
