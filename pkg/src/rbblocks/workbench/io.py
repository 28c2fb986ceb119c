"""File formats: PODM matrices with YAML sidecars, and CSV tables."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
import yaml

MAGIC = b"PODM"


def write_podm(path: str | Path, A: np.ndarray):
    """Write ``PODM``, u64 rows, u64 cols and the column-major little-endian f64 payload."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError("PODM stores matrices")
    rows, cols = A.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(np.asfortranarray(A).astype("<f8").tobytes(order="F"))


def read_podm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a PODM file")
    rows, cols = struct.unpack("<QQ", raw[4:20])
    payload = raw[20:]
    if len(payload) != 8 * rows * cols:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f8").reshape((rows, cols), order="F").astype(float)


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".yaml")


def write_sidecar(path: str | Path, meta: dict):
    sidecar_path(path).write_text(yaml.safe_dump(meta, sort_keys=True))


def read_sidecar(path: str | Path) -> dict:
    return yaml.safe_load(sidecar_path(path).read_text()) or {}


def write_csv(path: str | Path, header: list[str], rows) -> None:
    """CSV with a header row; floats are written with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(x) for x in row] for row in r]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def write_triplets(path: str | Path, A) -> None:
    """Sparse matrix as ``row col value`` lines (0-based)."""
    import scipy.sparse as sp

    C = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write(f"# {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i} {j} {float(v)!r}\n")
