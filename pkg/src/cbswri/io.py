"""File formats: binary grids, geometry text, PGM images, CSV logs, manifests.

Binary grid layout (little-endian)::

    b"CBSWRI01" | u32 nx | u32 nz | f64 dx | u32 ncomp | nz*nx*ncomp f64

``ncomp`` is 1 for real and 2 for complex data, stored as interleaved
``(re, im)`` pairs.  Values are row-major with ``z`` the slow axis.  A data
matrix reuses the layout with ``nx = Ns``, ``nz = Nr`` and the frequency in
Hz in the ``dx`` slot.
"""
from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid import AcquisitionGeometry, DataMatrix, Grid2D, SquaredSlownessModel

MAGIC = b"CBSWRI01"
_HEADER = struct.Struct("<8sIIdI")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def write_grid(path, values: np.ndarray, dx: float) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("grid values must be 2D (nz, nx)")
    if not np.all(np.isfinite(values)):
        raise ValueError("grid values must be finite")
    nz, nx = values.shape
    if np.iscomplexobj(values):
        ncomp = 2
        body = np.ascontiguousarray(values, dtype="<c16").view("<f8")
    else:
        ncomp = 1
        body = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, nx, nz, float(dx), ncomp))
        fh.write(body.tobytes())


def read_grid(path) -> tuple[np.ndarray, float]:
    """Return ``(values, dx)``; complex files come back as complex arrays."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, nx, nz, dx, ncomp = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if ncomp not in (1, 2):
        raise FormatError(f"{path}: ncomp must be 1 or 2, got {ncomp}")
    expected = nx * nz * ncomp * 8
    if len(raw) - _HEADER.size != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(raw) - _HEADER.size}")
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    values = flat.view("<c16") if ncomp == 2 else flat
    return values.reshape(nz, nx).astype(complex if ncomp == 2 else float), float(dx)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# models ---------------------------------------------------------------------

def save_model(path, model: SquaredSlownessModel) -> None:
    write_grid(path, model.values, model.grid.dx)


def load_model(path, pad: int = 0, bounds=None, units: str = "slowness2") -> SquaredSlownessModel:
    """Read a model grid holding squared slowness or, with ``units="velocity"``, m/s."""
    values, dx = read_grid(path)
    if np.iscomplexobj(values):
        raise FormatError(f"{path}: a model must be real")
    nz, nx = values.shape
    grid = Grid2D(nx, nz, dx, pad)
    if units == "velocity":
        return SquaredSlownessModel.from_velocity(grid, values, bounds)
    if units != "slowness2":
        raise ValueError(f"unknown model units {units!r}")
    if bounds is None:
        return SquaredSlownessModel(grid, values)
    return SquaredSlownessModel(grid, values, bounds)


# data -----------------------------------------------------------------------

def save_data(path, data: DataMatrix) -> None:
    write_grid(path, np.asarray(data.values, dtype=complex), data.frequency)


def load_data(path) -> DataMatrix:
    values, freq = read_grid(path)
    return DataMatrix(freq, np.asarray(values, dtype=complex))


def load_data_dir(directory) -> dict[float, DataMatrix]:
    """All data files in ``directory`` keyed by the frequency in their header."""
    out: dict[float, DataMatrix] = {}
    for p in sorted(Path(directory).glob("*.bin")):
        try:
            d = load_data(p)
        except FormatError:
            continue
        if d.frequency in out:
            raise FormatError(f"two data files for {d.frequency} Hz in {directory}")
        out[d.frequency] = d
    return out


def data_filename(freq: float) -> str:
    return f"data_{freq:.6g}Hz.bin"


# geometry -------------------------------------------------------------------

def read_geometry(path) -> AcquisitionGeometry:
    """Parse ``S x z`` / ``R x z`` lines; ``#`` starts a comment."""
    sources, receivers = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0].upper() not in ("S", "R"):
            raise FormatError(f"{path}:{lineno}: expected 'S x z' or 'R x z', got {line!r}")
        try:
            pos = (float(parts[1]), float(parts[2]))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        (sources if parts[0].upper() == "S" else receivers).append(pos)
    if not sources or not receivers:
        raise FormatError(f"{path}: geometry needs at least one source and one receiver")
    return AcquisitionGeometry(sources, receivers)


def write_geometry(path, geometry: AcquisitionGeometry) -> None:
    lines = [f"S {x!r} {z!r}" for x, z in geometry.sources]
    lines += [f"R {x!r} {z!r}" for x, z in geometry.receivers]
    Path(path).write_text("\n".join(lines) + "\n")


# images ---------------------------------------------------------------------

def to_gray(values: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a constant field maps to mid-gray 128."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot render non-finite values")
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full(values.shape, 128, dtype=np.uint8)
    return np.rint(255 * (values - lo) / (hi - lo)).astype(np.uint8)


def write_pgm(path, values: np.ndarray) -> None:
    """8-bit binary graymap, ``nx`` wide and ``nz`` high."""
    gray = to_gray(values)
    nz, nx = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {nz}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise FormatError(f"{path}: not an 8-bit P5 graymap")
    nx, nz = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=nx * nz).reshape(nz, nx)


# logs -----------------------------------------------------------------------

def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_manifest(path, entries: Mapping[str, object]) -> None:
    """Plain ``key=value`` lines, in insertion order."""
    lines = []
    for k, v in entries.items():
        text = str(v)
        if "\n" in text:
            raise ValueError(f"manifest value for {k!r} spans lines")
        lines.append(f"{k}={text}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k] = v
    return out
