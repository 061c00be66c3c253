"""File formats: dataset CSV, JSON metadata sidecars, result rows, summary
rows, and the key = value configuration format.

All numbers are written with shortest round-trip decimal text, so
parse(print(rows)) reproduces values exactly and repeated writes are
byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .models import ObservationSet

__all__ = [
    "RESULT_COLUMNS",
    "SUMMARY_COLUMNS",
    "fmt",
    "write_dataset",
    "read_dataset",
    "read_labeled",
    "write_metadata",
    "read_metadata",
    "write_results",
    "read_results",
    "write_summary",
    "parse_config_file",
]

RESULT_COLUMNS = [
    "model", "algorithm", "eps", "delta", "d", "n", "T", "C",
    "seed", "iter", "error", "wall_ms",
]

SUMMARY_COLUMNS = [
    "model", "algorithm", "eps", "delta", "d", "n", "T", "C", "iter",
    "n_seeds", "median_error", "q25_error", "q75_error",
]


def fmt(value) -> str:
    """Shortest exact decimal text for a float; plain text otherwise."""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):  # np.float64 subclasses float
        if math.isnan(value):
            raise DataError("refusing to serialize NaN")
        return repr(float(value))
    return str(value)


def _parse_float(text: str, line: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"bad {what} value {text!r}", line) from None


def write_dataset(path, obs: ObservationSet) -> None:
    """gmm: y1..yd.  mrm/rmc: x1..xd,y; rmc leaves missing x-cells empty."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if obs.kind == "gmm":
            d = obs.ys.shape[1]
            writer.writerow([f"y{j + 1}" for j in range(d)])
            for row in obs.ys:
                writer.writerow([fmt(float(v)) for v in row])
            return
        d = obs.xs.shape[1]
        writer.writerow([f"x{j + 1}" for j in range(d)] + ["y"])
        for i in range(obs.n):
            cells = []
            for j in range(d):
                if obs.kind == "rmc" and not obs.mask[i, j]:
                    cells.append("")
                else:
                    cells.append(fmt(float(obs.xs[i, j])))
            cells.append(fmt(float(obs.ys[i])))
            writer.writerow(cells)


def read_dataset(path, kind: str) -> ObservationSet:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty dataset file", 1) from None
        if kind == "gmm":
            expected = [f"y{j + 1}" for j in range(len(header))]
            if header != expected:
                raise ParseError(f"expected header {expected}, got {header}", 1)
            d = len(header)
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != d:
                    raise ParseError(f"expected {d} cells, got {len(row)}", lineno)
                rows.append([_parse_float(c, lineno, "y") for c in row])
            if not rows:
                raise ParseError("dataset has no rows", 2)
            return ObservationSet("gmm", np.array(rows))
        d = len(header) - 1
        expected = [f"x{j + 1}" for j in range(d)] + ["y"]
        if d < 1 or header != expected:
            raise ParseError(f"expected header of the form x1..xd,y, got {header}", 1)
        xs, ys, mask = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise ParseError(f"expected {d + 1} cells, got {len(row)}", lineno)
            x_row, m_row = [], []
            for c in row[:-1]:
                if c == "":
                    if kind != "rmc":
                        raise ParseError("empty covariate cell outside rmc", lineno)
                    x_row.append(0.0)
                    m_row.append(False)
                else:
                    x_row.append(_parse_float(c, lineno, "x"))
                    m_row.append(True)
            xs.append(x_row)
            mask.append(m_row)
            ys.append(_parse_float(row[-1], lineno, "y"))
        if not ys:
            raise ParseError("dataset has no rows", 2)
        if kind == "mrm":
            return ObservationSet("mrm", np.array(ys), np.array(xs))
        return ObservationSet("rmc", np.array(ys), np.array(xs), np.array(mask, dtype=bool))


def read_labeled(path):
    """Labeled real data: f1..fd,label with label in {0, 1}."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty labeled file", 1) from None
        d = len(header) - 1
        expected = [f"f{j + 1}" for j in range(d)] + ["label"]
        if d < 1 or header != expected:
            raise ParseError(
                f"expected header of the form f1..fd,label, got {header}", 1
            )
        features, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise ParseError(f"expected {d + 1} cells, got {len(row)}", lineno)
            features.append([_parse_float(c, lineno, "feature") for c in row[:-1]])
            if row[-1] not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {row[-1]!r}", lineno)
            labels.append(int(row[-1]))
        if not labels:
            raise ParseError("labeled file has no rows", 2)
        return np.array(features), np.array(labels)


def write_metadata(path, meta: dict) -> None:
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_metadata(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad metadata JSON: {exc}", exc.lineno) from None


def write_results(path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([fmt(row[c]) for c in RESULT_COLUMNS])


def read_results(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty results file", 1) from None
        if header != RESULT_COLUMNS:
            raise ParseError(f"expected header {RESULT_COLUMNS}, got {header}", 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RESULT_COLUMNS):
                raise ParseError(
                    f"expected {len(RESULT_COLUMNS)} cells, got {len(row)}", lineno
                )
            record = dict(zip(RESULT_COLUMNS, row))
            for key in ("eps", "delta", "error", "wall_ms", "C"):
                if record[key] != "":
                    record[key] = _parse_float(record[key], lineno, key)
            for key in ("d", "n", "T", "seed", "iter"):
                try:
                    record[key] = int(record[key])
                except ValueError:
                    raise ParseError(f"bad {key} value {record[key]!r}", lineno) from None
            rows.append(record)
        return rows


def write_summary(path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([fmt(row[c]) for c in SUMMARY_COLUMNS])


def parse_config_file(path) -> dict[str, str]:
    """key = value lines; '#' starts a comment; keys may be dotted."""
    out: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw!r}", lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ParseError("empty key", lineno)
        out[key] = value.strip()
    return out
