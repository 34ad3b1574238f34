"""Convergent Born series solver for the 2D Helmholtz equation.

The operator is ``A u = lap(u) + k2 * u`` on the padded grid, where ``lap``
is the spectral (FFT) Laplacian and ``k2 = omega^2 m - i * alpha`` carries a
smooth absorbing profile ``alpha`` inside the pad.  The time convention is
``exp(+i omega t)``, so attenuation enters with a negative imaginary part,
the same sign as the ``-i eps`` of the attenuated background Green's
function.

The iteration is the preconditioned series

    u <- u - M G (A u - b),    M = (-i/eps) (k2 - k0^2 + i eps),
    G = (lap + k0^2 - i eps)^-1,

which converges whenever ``eps >= max |k2 - k0^2|``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.fft

from .grid import Grid2D, SquaredSlownessModel, pad_extend

log = logging.getLogger(__name__)

EPS_FLOOR_REL = 1e-8


class CbsDivergenceError(RuntimeError):
    """Raised when the residual grows steadily, i.e. ``eps`` is too small."""

    def __init__(self, message, eps=None, bound=None):
        super().__init__(message)
        self.eps = eps
        self.bound = bound


@dataclass(frozen=True)
class CbsConfig:
    eta: float = 1e-8
    max_iters: int = 20000
    k0_sq_override: Optional[float] = None
    eps_override: Optional[float] = None
    eps_safety: float = 1.1  # at exactly 1.0 M vanishes on the pad rim
    divergence_window: int = 20
    absorb_db: float = 60.0  # round-trip attenuation across the pad
    workers: Optional[int] = None  # FFT threads, None = scipy default

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.eps_safety < 1:
            raise ValueError("eps_safety must be >= 1")
        if self.divergence_window < 2:
            raise ValueError("divergence_window must be >= 2")


@dataclass(frozen=True)
class CbsSolveReport:
    iters: int
    final_residual: float
    k0_sq: float
    eps: float
    pseudo_speed: float
    scattering_contrast: float
    converged: bool

    CSV_HEADER = ("freq_hz", "iters", "residual", "k0_sq", "eps", "pseudo_speed", "nu", "converged")

    def csv_row(self, freq_hz: float) -> list:
        return [freq_hz, self.iters, f"{self.final_residual:.6e}", f"{self.k0_sq:.10e}",
                f"{self.eps:.10e}", f"{self.pseudo_speed:.10e}", f"{self.scattering_contrast:.10e}",
                int(self.converged)]


def laplacian_symbol(grid: Grid2D) -> np.ndarray:
    """``-|k|^2`` on the padded FFT grid, standard discrete wavenumbers."""
    nzp, nxp = grid.padded_shape
    kz = 2 * np.pi * np.fft.fftfreq(nzp, d=grid.dx)
    kx = 2 * np.pi * np.fft.fftfreq(nxp, d=grid.dx)
    return -(kz[:, None] ** 2 + kx[None, :] ** 2)


def absorbing_profile(grid: Grid2D, k_ref: float, db: float = 60.0) -> np.ndarray:
    """Non-negative absorption ``alpha`` (rad^2/m^2) vanishing on the interior.

    Quadratic in the distance into the pad, with the peak sized so that a
    wave of wavenumber ``k_ref`` crossing the pad twice loses ``db`` decibels.
    """
    alpha = np.zeros(grid.padded_shape)
    if grid.pad == 0 or db <= 0:
        return alpha
    nzp, nxp = grid.padded_shape
    p = grid.pad
    z = np.arange(nzp)
    x = np.arange(nxp)
    dz = np.maximum(np.maximum(p - z, z - (p + grid.nz - 1)), 0)
    dxx = np.maximum(np.maximum(p - x, x - (p + grid.nx - 1)), 0)
    dist = np.hypot(dz[:, None], dxx[None, :]) / p
    thickness = p * grid.dx
    alpha_max = 3.0 * np.log(10 ** (db / 20)) * k_ref / thickness
    return alpha_max * np.minimum(dist, 1.0) ** 2


def _k_ref(m_pad: np.ndarray, omega: float) -> float:
    return omega * np.sqrt(0.5 * (m_pad.min() + m_pad.max()))


def wavenumber_sq(model: SquaredSlownessModel, omega: float, absorb_db: float = 60.0) -> np.ndarray:
    """Complex ``k^2`` over the padded grid, absorption included."""
    m_pad = pad_extend(model)
    alpha = absorbing_profile(model.grid, _k_ref(m_pad, omega), absorb_db)
    return omega ** 2 * m_pad - 1j * alpha


def select_k0_sq(model: SquaredSlownessModel, omega: float, absorb_db: float = 60.0) -> float:
    """Background wavenumber^2 minimizing ``eps``: midpoint of ``Re k^2``."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    k2 = wavenumber_sq(model, omega, absorb_db).real
    return 0.5 * float(k2.min() + k2.max())


def select_eps(model: SquaredSlownessModel, omega: float, k0_sq: float, safety: float = 1.0,
               absorb_db: float = 60.0) -> float:
    """Smallest convergent attenuation ``max |k^2 - k0^2|``, times ``safety``."""
    if k0_sq <= 0:
        raise ValueError("k0_sq must be positive")
    k2 = wavenumber_sq(model, omega, absorb_db)
    bound = float(np.abs(k2 - k0_sq).max())
    return max(safety * bound, EPS_FLOOR_REL * k0_sq)


class HelmholtzOperator:
    """``A = lap + diag(k2)`` on a padded grid, with its CBS machinery.

    Instances are not mutated after construction and may be shared between
    threads.
    """

    def __init__(self, model: SquaredSlownessModel, omega: float, cfg: CbsConfig | None = None):
        if omega <= 0:
            raise ValueError("omega must be positive")
        cfg = cfg or CbsConfig()
        self.model = model
        self.grid = model.grid
        self.omega = float(omega)
        self.cfg = cfg
        self.k2 = wavenumber_sq(model, omega, cfg.absorb_db)
        self.lap = laplacian_symbol(model.grid)
        re = self.k2.real
        self.k0_sq = cfg.k0_sq_override if cfg.k0_sq_override is not None else 0.5 * float(re.min() + re.max())
        self.eps_bound = float(np.abs(self.k2 - self.k0_sq).max())
        if cfg.eps_override is not None:
            self.eps = float(cfg.eps_override)
        else:
            self.eps = max(cfg.eps_safety * self.eps_bound, EPS_FLOOR_REL * self.k0_sq)
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        self.k_max = float(np.sqrt(re.max()))
        self.potential = self.k2 - self.k0_sq + 1j * self.eps
        self.precond = (-1j / self.eps) * self.potential
        self.green_symbol = 1.0 / (self.lap + self.k0_sq - 1j * self.eps)

    # FFT helpers act on the last two axes so batches come for free.
    def _fft(self, u, overwrite=False):
        return scipy.fft.fft2(u, workers=self.cfg.workers, overwrite_x=overwrite)

    def _ifft(self, u, overwrite=False):
        return scipy.fft.ifft2(u, workers=self.cfg.workers, overwrite_x=overwrite)

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return self._ifft(self.lap * self._fft(u))

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.laplacian(u) + self.k2 * u

    def green(self, f: np.ndarray) -> np.ndarray:
        return self._ifft(self.green_symbol * self._fft(f))

    def residual(self, u: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Relative residual per right-hand side."""
        r = self.apply(u) - b
        nb = np.linalg.norm(np.reshape(b, b.shape[:-2] + (-1,)), axis=-1)
        if np.any(nb == 0):
            raise ValueError("relative residual undefined for a zero source")
        return np.linalg.norm(np.reshape(r, r.shape[:-2] + (-1,)), axis=-1) / nb

    def step(self, u: np.ndarray, b: np.ndarray) -> np.ndarray:
        return u - self.precond * self.green(self.apply(u) - b)

    @property
    def pseudo_speed(self) -> float:
        return 2.0 * np.sqrt(self.k0_sq) / self.eps

    @property
    def scattering_contrast(self) -> float:
        k0 = np.sqrt(self.k0_sq)
        return self.k_max / k0 - k0 / self.k_max

    def _report(self, iters, residual, converged) -> CbsSolveReport:
        return CbsSolveReport(int(iters), float(residual), self.k0_sq, self.eps,
                              self.pseudo_speed, self.scattering_contrast, bool(converged))

    def solve_many(self, b: np.ndarray, eta: float | None = None, max_iters: int | None = None):
        """Solve ``A u = b`` for a batch ``b`` of shape ``(nrhs, nzp, nxp)``.

        Each right-hand side stops independently once its relative residual
        reaches ``eta``.  Zero right-hand sides return zero fields at once.
        Divergence is declared when a residual rises for ``divergence_window``
        consecutive iterations and sits above its starting value of one.
        """
        eta = self.cfg.eta if eta is None else eta
        max_iters = self.cfg.max_iters if max_iters is None else max_iters
        b = np.asarray(b, dtype=complex)
        if b.shape[-2:] != self.grid.padded_shape or b.ndim != 3:
            raise ValueError(f"expected a (nrhs, {self.grid.padded_shape}) batch, got {b.shape}")
        if not np.all(np.isfinite(b)):
            raise ValueError("source contains non-finite values")
        nrhs = b.shape[0]
        u = np.zeros_like(b)
        bnorm = np.linalg.norm(b.reshape(nrhs, -1), axis=1)
        res = np.where(bnorm > 0, 1.0, 0.0)
        iters = np.zeros(nrhs, dtype=int)
        done = bnorm == 0
        rising = np.zeros(nrhs, dtype=int)
        window = self.cfg.divergence_window
        active = np.flatnonzero(~done)
        inv_green = self.lap + self.k0_sq - 1j * self.eps
        # Parseval scaling for norms taken on unnormalized spectra
        spec_scale = 1.0 / np.sqrt(self.grid.n_padded)
        for it in range(max_iters + 1):
            if active.size == 0:
                break
            whole = active.size == nrhs
            ua = u if whole else u[active]
            # G (A u - b) = u + G (V u - b), so one transform pair gives the
            # update and a third transform of u gives the residual spectrum.
            s_hat = self._fft(self.potential * ua - (b if whole else b[active]), overwrite=True)
            r_hat = inv_green * self._fft(ua) + s_hat
            new_res = spec_scale * np.linalg.norm(r_hat.reshape(active.size, -1), axis=1) / bnorm[active]
            rising[active] = np.where(new_res > res[active], rising[active] + 1, 0)
            res[active] = new_res
            iters[active] = it
            # a steady rise only counts once the residual exceeds its starting
            # value: near the bound the non-normal series has long transient
            # rises below it and still converges
            diverging = (rising[active] >= window) & (new_res > 1.0)
            if np.any(diverging):
                bad = active[diverging][0]
                raise CbsDivergenceError(
                    f"CBS diverged: residual rose for {window} consecutive iterations past its start "
                    f"(residual {res[bad]:.3e} at iteration {it}); eps={self.eps:.6g} while "
                    f"convergence needs eps >= max|k^2 - k0^2| = {self.eps_bound:.6g}",
                    eps=self.eps, bound=self.eps_bound)
            hit = new_res <= eta
            if it == max_iters:
                break
            keep = ~hit
            if keep.all():
                y = ua + self._ifft(self.green_symbol * s_hat, overwrite=True)
                if whole:
                    u -= self.precond * y
                else:
                    u[active] = ua - self.precond * y
            elif keep.any():
                idx = active[keep]
                y = ua[keep] + self._ifft(self.green_symbol * s_hat[keep], overwrite=True)
                u[idx] = ua[keep] - self.precond * y
            active = active[keep]
        reports = [self._report(iters[j], res[j], res[j] <= eta) for j in range(nrhs)]
        for rep in reports:
            if not rep.converged:
                log.warning("CBS stopped at max_iters=%d with residual %.3e > eta=%.1e",
                            rep.iters, rep.final_residual, eta)
        return u, reports

    def solve(self, b: np.ndarray, eta: float | None = None, max_iters: int | None = None):
        u, reports = self.solve_many(np.asarray(b)[None], eta, max_iters)
        return u[0], reports[0]

    def solve_many_transposed(self, b: np.ndarray, eta: float | None = None, max_iters: int | None = None):
        """Solve ``A^T u = b``.  The spectral operator is complex symmetric,
        so this is the forward solve; subclasses with a non-symmetric
        discretization override it."""
        return self.solve_many(b, eta, max_iters)


def spectral_laplacian(u: np.ndarray, grid: Grid2D) -> np.ndarray:
    """FFT Laplacian of a padded field (or batch of fields)."""
    return scipy.fft.ifft2(laplacian_symbol(grid) * scipy.fft.fft2(u))


def green_apply(field: np.ndarray, grid: Grid2D, k0_sq: float, eps: float) -> np.ndarray:
    """Attenuated background Green's function ``(lap + k0^2 - i eps)^-1``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    field = np.asarray(field, dtype=complex)
    return scipy.fft.ifft2(scipy.fft.fft2(field) / (laplacian_symbol(grid) + k0_sq - 1j * eps))


def apply_helmholtz(model: SquaredSlownessModel, omega: float, u: np.ndarray,
                    cfg: CbsConfig | None = None) -> np.ndarray:
    return HelmholtzOperator(model, omega, cfg).apply(np.asarray(u, dtype=complex))


def wave_residual(model: SquaredSlownessModel, omega: float, u: np.ndarray, b: np.ndarray,
                  cfg: CbsConfig | None = None) -> float:
    """``||A u - b|| / ||b||``; a zero ``b`` is an error."""
    b = np.asarray(b, dtype=complex)
    if not np.any(b):
        raise ValueError("relative residual undefined for a zero source")
    return float(HelmholtzOperator(model, omega, cfg).residual(np.asarray(u, complex), b))


def cbs_step(u, b, model: SquaredSlownessModel, omega: float, k0_sq: float, eps: float,
             cfg: CbsConfig | None = None) -> np.ndarray:
    cfg = replace(cfg or CbsConfig(), k0_sq_override=k0_sq, eps_override=eps)
    return HelmholtzOperator(model, omega, cfg).step(np.asarray(u, complex), np.asarray(b, complex))


def solve_helmholtz(model: SquaredSlownessModel, omega: float, b: np.ndarray,
                    cfg: CbsConfig | None = None):
    """Solve ``A(m) u = b`` with CBS; returns ``(u, CbsSolveReport)``."""
    return HelmholtzOperator(model, omega, cfg).solve(b)


def solve_helmholtz_transposed(model: SquaredSlownessModel, omega: float, b: np.ndarray,
                               cfg: CbsConfig | None = None):
    """Solve ``A^T u = b``.  The spectral operator is complex symmetric."""
    return solve_helmholtz(model, omega, b, cfg)
