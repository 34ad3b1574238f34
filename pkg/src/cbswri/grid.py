"""Grids, squared-slowness models, wavefields, acquisition geometry and the
receiver sampling operator.

Arrays are stored row-major with shape ``(nz, nx)``: rows run along depth,
columns along the horizontal axis.  Wavefields live on the *padded* grid,
models on the interior grid.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid2D:
    """Uniform 2D grid with an absorbing pad of ``pad`` samples on every edge."""

    nx: int
    nz: int
    dx: float
    pad: int = 0

    def __post_init__(self):
        if self.nx < 4 or self.nz < 4:
            raise ValueError(f"grid must be at least 4x4, got {self.nx}x{self.nz}")
        if not (np.isfinite(self.dx) and self.dx > 0):
            raise ValueError(f"dx must be positive, got {self.dx}")
        if self.pad < 0:
            raise ValueError(f"pad must be non-negative, got {self.pad}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nz, self.nx)

    @property
    def padded_shape(self) -> tuple[int, int]:
        return (self.nz + 2 * self.pad, self.nx + 2 * self.pad)

    @property
    def n_padded(self) -> int:
        nzp, nxp = self.padded_shape
        return nzp * nxp

    @property
    def interior(self) -> tuple[slice, slice]:
        """Index into a padded array that selects the interior block."""
        p = self.pad
        return (slice(p, p + self.nz), slice(p, p + self.nx))

    def node(self, x: float, z: float) -> tuple[int, int]:
        """Nearest interior node ``(iz, ix)`` of a position in meters."""
        ix = int(round(x / self.dx))
        iz = int(round(z / self.dx))
        if not (0 <= ix < self.nx and 0 <= iz < self.nz):
            raise ValueError(f"position ({x}, {z}) m lies outside the interior domain")
        return iz, ix

    def padded_node(self, x: float, z: float) -> tuple[int, int]:
        iz, ix = self.node(x, z)
        return iz + self.pad, ix + self.pad

    def check_sampling(self, vmin: float, fmax: float) -> None:
        """Warn if the spacing exceeds a quarter of the shortest wavelength."""
        lam_min = vmin / fmax
        if self.dx > lam_min / 4:
            warnings.warn(
                f"dx={self.dx} m exceeds a quarter of the minimum wavelength "
                f"({lam_min / 4:.3g} m at {fmax} Hz)",
                stacklevel=2,
            )


def suggest_pad(dx: float, vmax: float, fmin: float, wavelengths: float = 1.5) -> int:
    """Pad width in samples covering ``wavelengths`` of the longest wavelength."""
    return int(np.ceil(wavelengths * vmax / fmin / dx))


def contrast_pad(values, dx: float, fmin: float, db: float = 60.0, ratio: float = 0.5) -> int:
    """Pad width in samples keeping the peak absorption below the interior contrast.

    The absorber peak is held to ``ratio * max|omega^2 m - k0^2|`` over the
    interior at ``fmin`` (and lower, relatively, above it), so ``eps`` is set
    by the medium and CBS iteration counts grow with frequency as the medium
    dictates.  The width scales as ``1/(ratio * contrast * fmin)``, so weakly
    scattering models get thick pads.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        raise ValueError("contrast_pad needs a heterogeneous model")
    omega = 2 * np.pi * fmin
    k_ref = omega * np.sqrt(0.5 * (lo + hi))
    contrast = 0.5 * omega ** 2 * (hi - lo)
    return int(np.ceil(3.0 * np.log(10 ** (db / 20)) * k_ref / (ratio * contrast) / dx))


@dataclass(frozen=True)
class SquaredSlownessModel:
    """Squared slowness (s^2/m^2) on the interior grid with box bounds."""

    grid: Grid2D
    values: np.ndarray
    bounds: tuple[float, float] = (1.0 / 8000.0 ** 2, 1.0 / 300.0 ** 2)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"model shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("model contains non-finite values")
        if np.any(values <= 0):
            raise ValueError("squared slowness must be strictly positive")
        lo, hi = float(self.bounds[0]), float(self.bounds[1])
        if not (0 < lo <= hi):
            raise ValueError(f"invalid bounds {self.bounds}")
        tol = 1e-12 * hi
        if values.min() < lo - tol or values.max() > hi + tol:
            raise ValueError(
                f"model values [{values.min():.4g}, {values.max():.4g}] outside bounds [{lo:.4g}, {hi:.4g}]"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bounds", (lo, hi))

    @classmethod
    def from_velocity(cls, grid: Grid2D, velocity, bounds=None) -> "SquaredSlownessModel":
        velocity = np.asarray(velocity, dtype=float)
        if velocity.ndim == 0:
            velocity = np.full(grid.shape, float(velocity))
        m = 1.0 / velocity ** 2
        if bounds is None:
            bounds = (float(m.min()), float(m.max()))
        return cls(grid, m, bounds)

    def with_values(self, values) -> "SquaredSlownessModel":
        return SquaredSlownessModel(self.grid, values, self.bounds)

    @property
    def velocity(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.values)

    def relative_error(self, other: "SquaredSlownessModel") -> float:
        return float(np.linalg.norm(self.values - other.values) / np.linalg.norm(other.values))


@dataclass(frozen=True)
class ComplexWavefield:
    """Complex monochromatic field over the padded grid."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=complex)
        if values.shape != self.grid.padded_shape:
            raise ValueError(f"wavefield shape {values.shape} does not match padded grid {self.grid.padded_shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("wavefield contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ComplexWavefield":
        return cls(grid, np.zeros(grid.padded_shape, complex))


def pad_extend(model: SquaredSlownessModel) -> np.ndarray:
    """Embed the model in the padded grid, filling the pad by edge replication."""
    return np.pad(model.values, model.grid.pad, mode="edge")


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Source and receiver positions in meters, as ``(x, z)`` pairs."""

    sources: tuple[tuple[float, float], ...]
    receivers: tuple[tuple[float, float], ...]

    def __post_init__(self):
        src = tuple((float(x), float(z)) for x, z in self.sources)
        rec = tuple((float(x), float(z)) for x, z in self.receivers)
        if not src:
            raise ValueError("geometry has no sources")
        if not rec:
            raise ValueError("geometry has no receivers")
        if not np.all(np.isfinite(src)) or not np.all(np.isfinite(rec)):
            raise ValueError("geometry contains non-finite positions")
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "receivers", rec)

    @property
    def ns(self) -> int:
        return len(self.sources)

    @property
    def nr(self) -> int:
        return len(self.receivers)

    def validate(self, grid: Grid2D) -> None:
        for x, z in self.sources + self.receivers:
            grid.node(x, z)

    def observation(self, grid: Grid2D) -> "ObservationOperator":
        return ObservationOperator.from_positions(grid, self.receivers)

    def source_fields(self, grid: Grid2D, amplitude: float | None = None) -> np.ndarray:
        """Point sources as a ``(ns, nzp, nxp)`` batch.

        The default amplitude ``1/dx^2`` makes the discrete source a unit
        point impulse in the continuum limit.
        """
        if amplitude is None:
            amplitude = 1.0 / grid.dx ** 2
        b = np.zeros((self.ns,) + grid.padded_shape, complex)
        for s, (x, z) in enumerate(self.sources):
            iz, ix = grid.padded_node(x, z)
            b[s, iz, ix] = amplitude
        return b


@dataclass(frozen=True)
class ObservationOperator:
    """Nearest-node sampling of padded wavefields at receiver nodes.

    Row ``i`` of the implied ``nr x N`` matrix is the unit vector of receiver
    ``i``'s node, so the transpose injects values at those nodes.
    """

    grid: Grid2D
    iz: np.ndarray
    ix: np.ndarray

    def __post_init__(self):
        iz = np.asarray(self.iz, dtype=np.intp).copy()
        ix = np.asarray(self.ix, dtype=np.intp).copy()
        if iz.shape != ix.shape or iz.ndim != 1 or iz.size == 0:
            raise ValueError("receiver index arrays must be non-empty 1D arrays of equal length")
        nzp, nxp = self.grid.padded_shape
        if iz.min() < 0 or iz.max() >= nzp or ix.min() < 0 or ix.max() >= nxp:
            raise ValueError("receiver index outside the padded grid")
        iz.setflags(write=False)
        ix.setflags(write=False)
        object.__setattr__(self, "iz", iz)
        object.__setattr__(self, "ix", ix)

    @classmethod
    def from_positions(cls, grid: Grid2D, positions: Sequence[tuple[float, float]]) -> "ObservationOperator":
        nodes = [grid.padded_node(x, z) for x, z in positions]
        iz, ix = zip(*nodes)
        return cls(grid, np.array(iz), np.array(ix))

    @property
    def nr(self) -> int:
        return self.iz.size

    @property
    def flat_index(self) -> np.ndarray:
        return np.ravel_multi_index((self.iz, self.ix), self.grid.padded_shape)

    def sample(self, wavefield) -> np.ndarray:
        """Values at the receiver nodes; batches keep their leading axes."""
        values = getattr(wavefield, "values", wavefield)
        values = np.asarray(values)
        if values.shape[-2:] != self.grid.padded_shape:
            raise ValueError(f"wavefield shape {values.shape[-2:]} does not match padded grid {self.grid.padded_shape}")
        return values[..., self.iz, self.ix]

    def inject(self, data) -> np.ndarray:
        """Adjoint of :meth:`sample`: place ``data[..., i]`` at receiver ``i``.

        Duplicate receivers accumulate, as the transpose of the sampling
        matrix requires.
        """
        data = np.asarray(data)
        if data.shape[-1:] != (self.nr,):
            raise ValueError(f"expected {self.nr} receiver values, got trailing shape {data.shape[-1:]}")
        out = np.zeros(data.shape[:-1] + self.grid.padded_shape, dtype=np.result_type(data, complex))
        lead = out.reshape(data.shape[:-1] + (-1,))
        flat = self.flat_index
        for i in range(self.nr):
            lead[..., flat[i]] += data[..., i]
        return out

    def matrix(self) -> np.ndarray:
        """Dense ``nr x N`` 0/1 matrix, for oracle work on small grids."""
        mat = np.zeros((self.nr, self.grid.n_padded))
        mat[np.arange(self.nr), self.flat_index] = 1.0
        return mat


@dataclass(frozen=True)
class DataMatrix:
    """Complex ``nr x ns`` data at one frequency (Hz)."""

    frequency: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=complex)
        if values.ndim != 2:
            raise ValueError("data matrix must be 2D (nr x ns)")
        if not np.all(np.isfinite(values)):
            raise ValueError("data contain non-finite values")
        if not (np.isfinite(self.frequency) and self.frequency > 0):
            raise ValueError(f"invalid frequency {self.frequency}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def nr(self) -> int:
        return self.values.shape[0]

    @property
    def ns(self) -> int:
        return self.values.shape[1]
