"""Measured or synthetic cycling data and its CSV form."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REQUIRED_COLUMNS = ("time_s", "current_A", "voltage_V", "temperature_K")
OPTIONAL_COLUMNS = ("flag", "block")
FLAGS = ("CC", "CV", "REST")


class DataError(ValueError):
    """Malformed data file or inconsistent samples."""


@dataclass
class DataSet:
    """Samples ``(t, I, v, T)`` with optional per-sample step flags and block ids.

    A block is a stretch of data that starts from a rested, known state; the
    replay in :mod:`p2dident.fit` restarts the model at every block.
    """

    t: np.ndarray
    I: np.ndarray
    v: np.ndarray
    T: np.ndarray
    flag: np.ndarray | None = None
    block: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t, self.I, self.v, self.T = (np.asarray(a, dtype=float) for a in (self.t, self.I, self.v, self.T))
        n = self.t.size
        if n == 0:
            raise DataError("data set is empty")
        if not (self.I.size == self.v.size == self.T.size == n):
            raise DataError("columns differ in length")
        for name in ("t", "I", "v", "T"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"non-finite values in column {name}")
        if np.any(np.diff(self.t) <= 0):
            k = int(np.flatnonzero(np.diff(self.t) <= 0)[0]) + 1
            raise DataError(f"time stamps must increase strictly (sample {k})")
        if np.any(self.T <= 0):
            raise DataError("temperatures must be positive")
        if self.flag is not None:
            self.flag = np.asarray(self.flag, dtype=object)
            if self.flag.size != n:
                raise DataError("flag column length mismatch")
            bad = set(self.flag.tolist()) - set(FLAGS)
            if bad:
                raise DataError(f"unknown flags {sorted(bad)}")
        if self.block is not None:
            self.block = np.asarray(self.block, dtype=int)
            if self.block.size != n:
                raise DataError("block column length mismatch")
            if np.any(np.diff(self.block) < 0):
                raise DataError("block ids must be non-decreasing")

    def __len__(self):
        return self.t.size

    def block_ranges(self) -> list[tuple[int, int]]:
        """Index ranges ``[start, stop)`` of the blocks; one block when unannotated."""
        if self.block is None:
            return [(0, self.t.size)]
        cuts = np.flatnonzero(np.diff(self.block) != 0) + 1
        edges = np.concatenate([[0], cuts, [self.t.size]])
        return list(zip(edges[:-1].tolist(), edges[1:].tolist()))

    def with_voltage(self, v) -> "DataSet":
        return DataSet(self.t, self.I, np.asarray(v, dtype=float), self.T, self.flag, self.block, dict(self.meta))


def write_csv(data: DataSet, path, comments: list[str] | None = None) -> None:
    """Write with 17 significant digits so values survive a round trip."""
    cols = list(REQUIRED_COLUMNS)
    if data.flag is not None:
        cols.append("flag")
    if data.block is not None:
        cols.append("block")
    with open(Path(path), "w", newline="") as fh:
        for line in comments or []:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for k in range(len(data)):
            row = [f"{data.t[k]:.17g}", f"{data.I[k]:.17g}", f"{data.v[k]:.17g}", f"{data.T[k]:.17g}"]
            if data.flag is not None:
                row.append(data.flag[k])
            if data.block is not None:
                row.append(str(int(data.block[k])))
            w.writerow(row)


def read_csv(path) -> DataSet:
    """Load a data CSV; ``#`` lines are comments, reported as ``meta["comments"]``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    comments = []
    header = None
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if row[0].lstrip().startswith("#"):
                comments.append(",".join(row).lstrip()[1:].strip())
                continue
            if header is None:
                header = [c.strip() for c in row]
                missing = [c for c in REQUIRED_COLUMNS if c not in header]
                if missing:
                    raise DataError(f"{path}:{lineno}: missing columns {missing}")
                unknown = [c for c in header if c not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
                if unknown:
                    raise DataError(f"{path}:{lineno}: unknown columns {unknown}")
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, row))
    if header is None or not rows:
        raise DataError(f"{path}: no data rows")
    idx = {c: header.index(c) for c in header}
    n = len(rows)
    num = {c: np.empty(n) for c in REQUIRED_COLUMNS}
    flag = [] if "flag" in idx else None
    block = np.empty(n, dtype=int) if "block" in idx else None
    for k, (lineno, row) in enumerate(rows):
        try:
            for c in REQUIRED_COLUMNS:
                num[c][k] = float(row[idx[c]])
            if block is not None:
                block[k] = int(row[idx["block"]])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric field") from None
        if flag is not None:
            flag.append(row[idx["flag"]].strip())
    try:
        return DataSet(num["time_s"], num["current_A"], num["voltage_V"], num["temperature_K"],
                       flag, block, {"comments": comments, "source": str(path)})
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
