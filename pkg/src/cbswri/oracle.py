"""Dense reference solvers for tiny grids.

Everything here assembles matrices explicitly and uses direct methods.  It
exists to check the FFT/CBS and ADMM code paths, not to be fast.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .cbs import CbsConfig, HelmholtzOperator
from .grid import ObservationOperator, SquaredSlownessModel

log = logging.getLogger(__name__)

DENSE_CAP = 4096


class OracleCapError(ValueError):
    """Grid too large for the dense oracle."""


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise OracleCapError(f"{n} padded unknowns exceed the dense oracle cap of {cap}")


@dataclass(frozen=True)
class DenseOperator:
    n: int
    entries: np.ndarray

    def __post_init__(self):
        if self.entries.shape != (self.n, self.n):
            raise ValueError("entries must be n x n")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("operator has non-finite entries")

    def __matmul__(self, other):
        return self.entries @ other


def spectral_second_derivative(n: int, d: float) -> np.ndarray:
    """Periodic spectral d^2/dx^2 matrix, the circulant of the FFT symbol.

    The stencil is folded to be exactly even, so the matrix is exactly
    symmetric rather than symmetric to round-off.
    """
    k = 2 * np.pi * np.fft.fftfreq(n, d=d)
    c = np.fft.ifft(-(k ** 2)).real
    c = 0.5 * (c + np.roll(c[::-1], 1))
    idx = np.arange(n)
    return c[(idx[:, None] - idx[None, :]) % n]


def assemble_helmholtz(model: SquaredSlownessModel, omega: float, cfg: CbsConfig | None = None,
                       cap: int = DENSE_CAP) -> DenseOperator:
    """Explicit matrix of the spectral Helmholtz operator (row-major unknowns)."""
    grid = model.grid
    _check_cap(grid.n_padded, cap)
    op = HelmholtzOperator(model, omega, cfg)
    nzp, nxp = grid.padded_shape
    lap = (np.kron(spectral_second_derivative(nzp, grid.dx), np.eye(nxp))
           + np.kron(np.eye(nzp), spectral_second_derivative(nxp, grid.dx)))
    entries = lap.astype(complex)
    entries[np.diag_indices_from(entries)] += op.k2.ravel()
    return DenseOperator(grid.n_padded, entries)


def direct_solve(Aop: DenseOperator, b) -> np.ndarray:
    """Solve ``A u = b`` by LU; ``b`` may be a field or a batch of fields."""
    b = np.asarray(b, dtype=complex)
    shape = b.shape
    rhs = b.reshape(-1, Aop.n).T
    with np.errstate(all="raise"):
        try:
            lu = scipy.linalg.lu_factor(Aop.entries, check_finite=False)
        except (FloatingPointError, scipy.linalg.LinAlgError) as exc:
            raise np.linalg.LinAlgError(f"singular operator: {exc}") from exc
    if np.any(np.diag(lu[0]) == 0):
        raise np.linalg.LinAlgError("singular operator")
    return scipy.linalg.lu_solve(lu, rhs, check_finite=False).T.reshape(shape)


class DenseHelmholtz(HelmholtzOperator):
    """Drop-in replacement for :class:`HelmholtzOperator` that solves by LU.

    Shares the FFT ``apply``/``laplacian`` of the parent, so both paths see
    the same operator; only ``solve_many`` changes.
    """

    def __init__(self, model, omega, cfg=None, cap: int = DENSE_CAP):
        super().__init__(model, omega, cfg)
        self.dense = assemble_helmholtz(model, omega, cfg, cap)
        self._lu = scipy.linalg.lu_factor(self.dense.entries, check_finite=False)

    def solve_many(self, b, eta=None, max_iters=None):
        b = np.asarray(b, dtype=complex)
        n = self.dense.n
        u = scipy.linalg.lu_solve(self._lu, b.reshape(-1, n).T, check_finite=False).T.reshape(b.shape)
        reports = [self._report(0, 0.0, True) for _ in range(b.shape[0])]
        return u, reports


def dense_factory(cap: int = DENSE_CAP):
    """Operator factory for the WRI engine that uses the dense LU solver."""
    def make(model, omega, cfg=None):
        return DenseHelmholtz(model, omega, cfg, cap)
    return make


def solve_augmented_normal(model: SquaredSlownessModel, omega: float, P: ObservationOperator,
                           lam0: float, lam1: float, rhs_wave, rhs_data,
                           cfg: CbsConfig | None = None, cap: int = DENSE_CAP) -> np.ndarray:
    """Least-squares wavefields of the stacked wave and observation equations.

    Minimizes ``lam0 ||rhs_wave - A u||^2 + lam1 ||rhs_data - P u||^2`` per
    source.  ``rhs_wave`` is ``(ns, nzp, nxp)`` and ``rhs_data`` is ``(nr, ns)``.
    The stacked system is solved by QR-based least squares rather than by
    forming ``lam0 A^H A + lam1 P^T P``, which squares the condition number.
    """
    if lam0 <= 0 or lam1 < 0:
        raise ValueError("lam0 must be positive and lam1 non-negative")
    A = assemble_helmholtz(model, omega, cfg, cap).entries
    Pm = P.matrix()
    rhs_wave = np.asarray(rhs_wave, dtype=complex)
    ns = rhs_wave.shape[0]
    rhs_data = np.asarray(rhs_data, dtype=complex).reshape(P.nr, ns)
    stacked = np.vstack([np.sqrt(lam0) * A, np.sqrt(lam1) * Pm])
    rhs = np.vstack([np.sqrt(lam0) * rhs_wave.reshape(ns, -1).T, np.sqrt(lam1) * rhs_data])
    u, _, rank, _ = scipy.linalg.lstsq(stacked, rhs, lapack_driver="gelsy")
    if rank < A.shape[1]:
        raise np.linalg.LinAlgError("augmented normal system is singular")
    return u.T.reshape(rhs_wave.shape)


def iteration_matrix(model: SquaredSlownessModel, omega: float, k0_sq: float, eps: float,
                     cfg: CbsConfig | None = None, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense ``I - M G A`` of the preconditioned series."""
    cfg = replace(cfg or CbsConfig(), k0_sq_override=k0_sq, eps_override=eps)
    grid = model.grid
    _check_cap(grid.n_padded, cap)
    op = HelmholtzOperator(model, omega, cfg)
    A = assemble_helmholtz(model, omega, cfg, cap).entries
    eye = np.eye(grid.n_padded).reshape((-1,) + grid.padded_shape)
    G = op.green(eye).reshape(grid.n_padded, -1).T
    return np.eye(grid.n_padded) - op.precond.ravel()[:, None] * (G @ A)


def cbs_spectral_radius(model: SquaredSlownessModel, omega: float, k0_sq: float, eps: float,
                        cfg: CbsConfig | None = None, cap: int = DENSE_CAP) -> float:
    """Largest eigenvalue magnitude of the CBS iteration operator."""
    T = iteration_matrix(model, omega, k0_sq, eps, cfg, cap)
    return float(np.abs(np.linalg.eigvals(T)).max())


def data_normal_dense(model0: SquaredSlownessModel, omega: float, P: ObservationOperator,
                      cfg: CbsConfig | None = None, cap: int = DENSE_CAP) -> np.ndarray:
    """``S S^H`` with ``S = P A^-1``, assembled densely (``nr x nr``)."""
    A = assemble_helmholtz(model0, omega, cfg, cap).entries
    S = scipy.linalg.solve(A.T, P.matrix().T).T
    return S @ S.conj().T


def largest_eig_data_normal(model0: SquaredSlownessModel, omega: float, P: ObservationOperator,
                            cfg: CbsConfig | None = None, method: str = "auto", tol: float = 1e-3,
                            max_iter: int = 200, seed: int = 0, cap: int = DENSE_CAP) -> float:
    """Largest eigenvalue of ``A^-H P^T P A^-1``, i.e. ``||P A^-1||^2``.

    ``method="dense"`` uses an explicit eigen-decomposition, ``"power"``
    runs power iteration with CBS forward and adjoint solves, and ``"auto"``
    picks dense below the cap.
    """
    if method == "auto":
        method = "dense" if model0.grid.n_padded <= cap else "power"
    if method == "dense":
        return float(np.linalg.eigvalsh(data_normal_dense(model0, omega, P, cfg, cap)).max())
    if method != "power":
        raise ValueError(f"unknown method {method!r}")

    op = HelmholtzOperator(model0, omega, cfg)
    rng = np.random.default_rng(seed)
    shape = model0.grid.padded_shape
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    val = 0.0
    for it in range(max_iter):
        y = P.sample(op.solve(x)[0])
        # A^-H z = conj(A^-1 conj(z)) for the complex-symmetric operator
        x = np.conj(op.solve(np.conj(P.inject(y)))[0])
        new = np.linalg.norm(x)
        if it > 0 and abs(new - val) <= tol * new:
            return float(new)
        val = new
        x /= new
    raise RuntimeError(f"power iteration did not reach rtol={tol} within {max_iter} iterations")
