"""Plain-text matrix files.

Format: a header line ``rows cols`` followed by ``rows`` lines of ``cols``
whitespace-separated decimals, row by row.  Scientific notation is accepted.
Values are written with 17 significant digits so a round trip is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from mfa_cgra.dense import as_matrix


class MatrixFormatError(ValueError):
    pass


def parse_matrix(text: str, source: str = "<string>") -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MatrixFormatError(f"{source}: empty matrix file")
    header = lines[0].split()
    if len(header) != 2:
        raise MatrixFormatError(f"{source}: header must be 'rows cols', got {lines[0]!r}")
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError as exc:
        raise MatrixFormatError(f"{source}: bad header {lines[0]!r}") from exc
    if rows < 1 or cols < 1:
        raise MatrixFormatError(f"{source}: dimensions must be positive, got {rows}x{cols}")
    body = lines[1:]
    if len(body) != rows:
        raise MatrixFormatError(f"{source}: expected {rows} data rows, found {len(body)}")
    data = np.empty((rows, cols), order="F")
    for i, ln in enumerate(body):
        fields = ln.split()
        if len(fields) != cols:
            raise MatrixFormatError(f"{source}: row {i + 1} has {len(fields)} values, expected {cols}")
        try:
            data[i, :] = [float(f) for f in fields]
        except ValueError as exc:
            raise MatrixFormatError(f"{source}: row {i + 1}: {exc}") from exc
    try:
        return as_matrix(data, source)
    except ValueError as exc:
        raise MatrixFormatError(str(exc)) from exc


def format_matrix(m) -> str:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    out = [f"{m.shape[0]} {m.shape[1]}"]
    for row in m:
        out.append(" ".join(format(float(v), ".17g") for v in row))
    return "\n".join(out) + "\n"


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    return parse_matrix(path.read_text(), str(path))


def write_matrix(path, m) -> None:
    Path(path).write_text(format_matrix(m))
