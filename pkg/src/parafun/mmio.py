"""Dense Matrix Market input/output.

The header and size line are validated here so that malformed files are
reported with a line number; the entries themselves are parsed by
:func:`scipy.io.mmread`.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.io

from .errors import MatrixMarketError

__all__ = ["read_matrix", "write_matrix"]

_FORMATS = ("array", "coordinate")
_FIELDS = ("real", "integer", "double")
_SYMMETRIES = ("general", "symmetric")


def _check_header(path):
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise MatrixMarketError("empty file", line=1)
        tokens = first.strip().lower().split()
        if len(tokens) != 5 or tokens[0] != "%%matrixmarket":
            raise MatrixMarketError("expected '%%MatrixMarket matrix <format> <field> <symmetry>'",
                                    line=1)
        _, obj, fmt, fld, sym = tokens
        if obj != "matrix":
            raise MatrixMarketError(f"unsupported object {obj!r}", line=1)
        if fmt not in _FORMATS:
            raise MatrixMarketError(f"unsupported format {fmt!r}", line=1)
        if fld not in _FIELDS:
            raise MatrixMarketError(f"unsupported field {fld!r}; only real matrices are read", line=1)
        if sym not in _SYMMETRIES:
            raise MatrixMarketError(f"unsupported symmetry {sym!r}", line=1)
        lineno = 1
        for raw in fh:
            lineno += 1
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            parts = line.split()
            want = 2 if fmt == "array" else 3
            try:
                dims = [int(p) for p in parts]
            except ValueError:
                raise MatrixMarketError(f"size line must hold {want} integers", line=lineno) from None
            if len(dims) != want or min(dims) < 0 or (fmt == "array" and min(dims) < 1):
                raise MatrixMarketError(f"size line must hold {want} non-negative integers",
                                        line=lineno)
            if sym == "symmetric" and dims[0] != dims[1]:
                raise MatrixMarketError("symmetric matrix must be square", line=lineno)
            return fmt, sym, dims
    raise MatrixMarketError("missing size line", line=lineno)


def read_matrix(path) -> np.ndarray:
    """Read a real Matrix Market file into a dense array.

    Array and coordinate formats are accepted, with general or symmetric
    storage; symmetric storage is expanded.
    """
    path = os.fspath(path)
    _check_header(path)
    try:
        m = scipy.io.mmread(path)
    except (ValueError, IndexError, OverflowError) as exc:
        raise MatrixMarketError(f"malformed entries: {exc}") from exc
    if hasattr(m, "toarray"):
        m = m.toarray()
    return np.asarray(m, dtype=np.float64)


def write_matrix(path, m) -> None:
    """Write ``m`` in array format, general storage, 17 significant digits."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    scipy.io.mmwrite(os.fspath(path), m, precision=17, symmetry="general")
