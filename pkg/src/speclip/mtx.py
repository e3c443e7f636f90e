"""MTX-lite matrix text format.

First line: ``rows cols`` as decimal integers. Then exactly rows * cols
whitespace-separated decimal floats in row-major order. Values are written
with 17 significant digits so a write/read round trip is exact for float64.
"""

from __future__ import annotations

import numpy as np


def read_mtx(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    tokens = text.split()
    if len(tokens) < 2:
        raise ValueError("MTX-lite file needs a 'rows cols' header")
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
    except ValueError as exc:
        raise ValueError(f"bad MTX-lite header: {tokens[:2]}") from exc
    if rows < 1 or cols < 1:
        raise ValueError(f"bad MTX-lite dimensions: {rows} x {cols}")
    values = tokens[2:]
    if len(values) != rows * cols:
        raise ValueError(
            f"expected {rows * cols} values, found {len(values)}")
    try:
        data = np.array([float(v) for v in values], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"bad MTX-lite value: {exc}") from exc
    if not np.isfinite(data).all():
        raise ValueError("MTX-lite values must be finite")
    return data.reshape(rows, cols)


def write_mtx(path, w) -> None:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("MTX-lite stores 2-D matrices")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{w.shape[0]} {w.shape[1]}\n")
        for row in w:
            fh.write(" ".join(format(v, ".17g") for v in row))
            fh.write("\n")
