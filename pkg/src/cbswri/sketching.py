"""Gaussian sketches for blending receivers and sources.

Entries are i.i.d. ``N(0, 1/cols)`` so that ``E[X X^T] = I`` holds for a
``rows x cols`` sketch.  Fresh sketches are drawn every outer iteration from
seeds derived deterministically from a master seed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Union

import numpy as np

RECEIVER, SOURCE = 0, 1


@dataclass(frozen=True)
class SketchOperator:
    rows: int
    cols: int
    entries: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        if self.entries.shape != (self.rows, self.cols):
            raise ValueError(f"entries have shape {self.entries.shape}, expected {(self.rows, self.cols)}")
        if not 1 <= self.cols <= self.rows:
            raise ValueError(f"sketch must satisfy 1 <= cols <= rows, got {self.rows}x{self.cols}")

    @classmethod
    def identity(cls, n: int) -> "SketchOperator":
        return cls(n, n, np.eye(n))

    @property
    def is_identity(self) -> bool:
        return self.rows == self.cols and np.array_equal(self.entries, np.eye(self.rows))


def make_sketch(rows: int, cols: int, seed: int) -> SketchOperator:
    if not 1 <= cols <= rows:
        raise ValueError(f"sketch size {cols} must lie in [1, {rows}]")
    rng = np.random.default_rng(seed)
    entries = rng.standard_normal((rows, cols)) / np.sqrt(cols)
    return SketchOperator(rows, cols, entries, int(seed))


def derive_seed(master_seed: int, iteration: int, kind: int) -> int:
    """Seed for the ``kind`` sketch at a global iteration counter."""
    return int(np.random.SeedSequence([master_seed, iteration, kind]).generate_state(1, np.uint32)[0])


def sketch_receivers(P, adjoint_sources: np.ndarray, X: SketchOperator) -> np.ndarray:
    """Blend unit receiver injections: columns of ``P^T X`` as fields.

    ``adjoint_sources`` is the ``(nr, nzp, nxp)`` batch of receiver impulses
    (``P^T`` columns); the result is the ``(nr', nzp, nxp)`` blended batch.
    """
    if adjoint_sources.shape[0] != X.rows:
        raise ValueError(f"sketch has {X.rows} rows but there are {adjoint_sources.shape[0]} receivers")
    if not np.any(X.entries):
        warnings.warn("zero receiver sketch: the data extension vanishes", stacklevel=2)
    return np.tensordot(X.entries.T, adjoint_sources, axes=1)


def sketch_sources(b: np.ndarray, lambda_b: np.ndarray, lambda_d: np.ndarray, Y: SketchOperator):
    """Super-sources, multipliers and data columns blended with one set of weights.

    ``b`` and ``lambda_b`` are ``(ns, nzp, nxp)``; ``lambda_d`` is ``(nr, ns)``.
    """
    if b.shape[0] != Y.rows or lambda_b.shape[0] != Y.rows or lambda_d.shape[1] != Y.rows:
        raise ValueError(f"sketch has {Y.rows} rows but batches have {b.shape[0]} sources")
    w = Y.entries
    return (np.tensordot(w.T, b, axes=1), np.tensordot(w.T, lambda_b, axes=1), lambda_d @ w)


# A receiver sketch size may be fixed or depend on frequency.
SketchSize = Union[None, int, Mapping[float, int], Callable[[float], int]]


def resolve_size(size: SketchSize, frequency: float, full: int) -> int:
    """Sketch size at ``frequency``; ``None`` means no sketching.

    A mapping is read as a piecewise-linear schedule over frequency, held
    constant outside its range and rounded to the nearest integer.
    """
    if size is None:
        return full
    if callable(size):
        n = int(size(frequency))
    elif isinstance(size, Mapping):
        fs = np.array(sorted(size))
        ns = np.array([size[f] for f in fs], dtype=float)
        n = int(round(float(np.interp(frequency, fs, ns))))
    else:
        n = int(size)
    return min(max(n, 1), full)


@dataclass(frozen=True)
class SketchConfig:
    receivers: SketchSize = None
    sources: Optional[int] = None
    master_seed: int = 0

    def receiver_count(self, frequency: float, nr: int) -> int:
        return resolve_size(self.receivers, frequency, nr)

    def source_count(self, ns: int) -> int:
        return resolve_size(self.sources, 0.0, ns)


def regenerate(cfg: SketchConfig, iteration: int, nr: int, ns: int, frequency: float):
    """Receiver and source sketches for one outer iteration.

    Returns ``(X, Y)``; either is ``None`` when that side is not sketched.
    """
    X = Y = None
    if cfg.receivers is not None:
        X = make_sketch(nr, cfg.receiver_count(frequency, nr), derive_seed(cfg.master_seed, iteration, RECEIVER))
    if cfg.sources is not None:
        Y = make_sketch(ns, cfg.source_count(ns), derive_seed(cfg.master_seed, iteration, SOURCE))
    return X, Y
