"""Pilot-data CSV ingestion, run-config files and atomic output writes."""

from __future__ import annotations

import csv
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from .core import InvalidDatasetError, PilotDataset
from .resampling import StudyCollection

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

STUDY_COLUMN = "study_id"


class DataFormatError(InvalidDatasetError):
    """A pilot file cannot be parsed; ``row`` is the 1-based file line (header = 1)."""

    def __init__(self, path, message: str, row: int | None = None, column: str | None = None):
        self.path = str(path)
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where += f", row {row}"
        if column is not None:
            where += f", column {column!r}"
        super().__init__(f"{self.path}{where}: {message}")


def load_pilot_csv(path) -> Union[PilotDataset, StudyCollection]:
    """Read a UTF-8 CSV of numeric pilot data with a header row.

    An optional ``study_id`` column splits the rows into studies; a file with
    several distinct study ids yields a :class:`StudyCollection` (studies in
    order of first appearance), otherwise a single :class:`PilotDataset`.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataFormatError(path, f"not valid UTF-8 ({exc.reason})") from None
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if not header or not any(h.strip() for h in header):
        raise DataFormatError(path, "empty file or missing header")
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise DataFormatError(path, "duplicate column names in header", row=1)
    if any(not h for h in header):
        raise DataFormatError(path, "blank column name in header", row=1)
    study_col = header.index(STUDY_COLUMN) if STUDY_COLUMN in header else None
    value_cols = [k for k in range(len(header)) if k != study_col]
    if not value_cols:
        raise DataFormatError(path, "no numeric columns")
    names = tuple(header[k] for k in value_cols)

    records = list(reader)
    while records and not any(c.strip() for c in records[-1]):
        records.pop()  # trailing blank lines
    rows, labels = [], []
    for line, rec in enumerate(records, start=2):
        if not rec and len(header) == 1:
            rec = [""]
        if len(rec) != len(header):
            raise DataFormatError(path, f"expected {len(header)} fields, found {len(rec)}", row=line)
        values = []
        for k in value_cols:
            cell = rec[k].strip()
            if not cell:
                raise DataFormatError(path, "missing value", row=line, column=header[k])
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(path, f"non-numeric value {cell!r}", row=line, column=header[k]) from None
            if not math.isfinite(v):
                raise DataFormatError(path, f"non-finite value {cell!r}", row=line, column=header[k])
            values.append(v)
        rows.append(values)
        labels.append(rec[study_col].strip() if study_col is not None else "pilot")

    if not rows:
        raise DataFormatError(path, "no data rows")
    data = np.array(rows, dtype=float)
    order = list(dict.fromkeys(labels))
    studies = []
    for sid in order:
        idx = [i for i, s in enumerate(labels) if s == sid]
        if len(idx) < 2:
            raise DataFormatError(path, f"study {sid!r} has {len(idx)} row(s); need at least 2")
        studies.append(PilotDataset(data[idx], names, sid))
    if len(studies) == 1:
        return studies[0]
    return StudyCollection(tuple(studies))


def pilot_to_csv(data: Union[PilotDataset, StudyCollection]) -> str:
    """CSV text that :func:`load_pilot_csv` reads back to the same matrix.

    Values are written with ``repr`` so the round trip is exact.
    """
    studies = data.studies if isinstance(data, StudyCollection) else (data,)
    multi = len(studies) > 1
    lines = [",".join(((STUDY_COLUMN,) if multi else ()) + studies[0].column_names)]
    for s in studies:
        prefix = [s.study_id] if multi else []
        lines.extend(",".join(prefix + [repr(float(v)) for v in row]) for row in s.rows)
    return "\n".join(lines) + "\n"


def write_pilot_csv(path, data: Union[PilotDataset, StudyCollection]) -> None:
    atomic_write_text(path, pilot_to_csv(data))


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and an atomic rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def load_config(path) -> dict:
    """Read a run configuration from a ``.json`` or ``.toml`` file."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            cfg = json.loads(path.read_text(encoding="utf-8"))
        elif path.suffix.lower() == ".toml":
            cfg = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            raise ValueError(f"{path}: config must be .json or .toml")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ValueError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return cfg
