"""Two-column CSV tables for tabulated kernels and custom diffusions."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class TableError(ValueError):
    pass


def read_two_column(path) -> tuple:
    """Read ``x, y`` columns from a comma-separated file.

    Lines starting with ``#`` are comments; a leading non-numeric row is
    taken as a header.  Exactly two columns are required and ``x`` must be
    strictly increasing.
    """
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise TableError(f"cannot read table {p}: {exc}") from exc
    rows = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if rows:
        try:
            [float(c) for c in rows[0].split(",")]
        except ValueError:
            rows = rows[1:]
    try:
        data = np.loadtxt(rows, delimiter=",", ndmin=2, dtype=float)
    except ValueError as exc:
        raise TableError(f"{p}: {exc}") from exc
    if data.shape[0] == 0 or data.shape[1] != 2:
        raise TableError(f"{p}: expected two columns, got shape {data.shape}")
    x, y = data[:, 0].copy(), data[:, 1].copy()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise TableError(f"{p}: non-finite entries")
    if np.any(np.diff(x) <= 0):
        raise TableError(f"{p}: first column must be strictly increasing")
    return x, y
