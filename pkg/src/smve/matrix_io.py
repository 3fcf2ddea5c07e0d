"""Matrix file formats.

Two formats are understood:

* dense CSV: one matrix row per line, comma separated, no header;
* binary: the 8-byte magic ``SMVE-MAT``, then ``M`` and ``N`` as
  little-endian ``uint32``, then ``M*N`` little-endian float64 values in
  column-major order (16-byte header in total).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidModel

MAGIC = b"SMVE-MAT"
_HEADER = struct.Struct("<8sII")


def read_matrix(path) -> np.ndarray:
    """Read a matrix, detecting the format from the leading bytes."""
    raw = Path(path).read_bytes()
    if raw.startswith(MAGIC):
        return _parse_binary(raw)
    return _parse_csv(raw.decode("utf-8", errors="replace"))


def _parse_binary(raw):
    if len(raw) < _HEADER.size:
        raise InvalidModel("truncated binary matrix header")
    _, M, N = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if len(body) != 8 * M * N:
        raise InvalidModel(f"binary matrix body has {len(body)} bytes, expected {8 * M * N}")
    return np.frombuffer(body, dtype="<f8").reshape((M, N), order="F").astype(float)


def _parse_csv(text):
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise InvalidModel(f"line {lineno}: {exc}") from None
    if not rows:
        raise InvalidModel("empty matrix file")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise InvalidModel(f"ragged CSV rows (lengths {sorted(width)})")
    return np.array(rows, dtype=float)


def write_matrix_csv(path, H):
    H = np.asarray(H, dtype=float)
    with open(path, "w") as fh:
        for row in H:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_matrix_binary(path, H):
    H = np.asarray(H, dtype=float)
    M, N = H.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, M, N))
        fh.write(np.asfortranarray(H).astype("<f8").tobytes(order="F"))
