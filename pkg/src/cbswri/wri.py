"""Iteratively refined wavefield reconstruction inversion, scaled-ADMM form.

One outer iteration at a single frequency:

1. adjoint columns ``C = S^H`` (one adjoint solve per receiver or blended
   receiver), with ``S = P A^-1``;
2. reduced residual ``dr = lambda_d - S lambda_b``, where ``S x`` is read off
   ``C`` by inner products, so it costs no solves;
3. extended residual ``de = (S S^H + lam0/lam1 I)^-1 dr`` from the dense
   ``nr x nr`` Gram matrix of the columns;
4. data-assimilated wavefields ``u = A^-1 (lambda_b + S^H de)``, one solve per
   source (or super-source);
5. closed-form Tikhonov model update and box projection;
6. multiplier ascent on the wave and observation equations.

Steps 2-4 give the exact minimizer of
``lam0 ||lambda_b - A u||^2 + lam1 ||lambda_d - P u||^2`` without forming the
augmented normal operator.  All transposes on complex quantities are
conjugate transposes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .cbs import CbsConfig, HelmholtzOperator, spectral_laplacian
from .grid import Grid2D, ObservationOperator, SquaredSlownessModel
from .sketching import SketchConfig, SketchOperator, regenerate, sketch_receivers, sketch_sources

log = logging.getLogger(__name__)

OperatorFactory = Callable[..., HelmholtzOperator]


@dataclass(frozen=True)
class WriConfig:
    lam0: Optional[float] = None  # explicit wave-equation weight; None = from lam0_fraction
    lam1: float = 1.0
    lam0_fraction: float = 1e-2
    tikhonov_weight: float = 0.0  # relative to the peak data-term curvature
    bounds: Optional[tuple[float, float]] = None
    max_inner_iters: int = 10
    solver: CbsConfig = field(default_factory=CbsConfig)

    def __post_init__(self):
        if self.lam0 is not None and self.lam0 <= 0:
            raise ValueError("lam0 must be positive")
        if self.lam1 <= 0:
            raise ValueError("lam1 must be positive")
        if self.lam0_fraction <= 0:
            raise ValueError("lam0_fraction must be positive")
        if self.tikhonov_weight < 0:
            raise ValueError("tikhonov_weight must be non-negative")
        if self.bounds is not None and not (0 < self.bounds[0] < self.bounds[1]):
            raise ValueError(f"invalid bounds {self.bounds}")


@dataclass
class SolveTally:
    forward: int = 0
    backward: int = 0

    @property
    def total(self) -> int:
        return self.forward + self.backward


@dataclass(frozen=True)
class WriProblem:
    """Fixed inputs at one frequency: sources ``b`` ``(ns, nzp, nxp)`` and
    observed data ``d`` ``(nr, ns)``."""

    frequency: float
    P: ObservationOperator
    b: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        if self.b.shape[1:] != self.P.grid.padded_shape:
            raise ValueError("source batch does not match the padded grid")
        if self.d.shape != (self.P.nr, self.b.shape[0]):
            raise ValueError(f"data shape {self.d.shape} != (nr, ns) = {(self.P.nr, self.b.shape[0])}")

    @property
    def omega(self) -> float:
        return 2 * np.pi * self.frequency


@dataclass(frozen=True)
class WriState:
    model: SquaredSlownessModel
    lambda_b: np.ndarray
    lambda_d: np.ndarray
    iteration: int = 0
    tally: SolveTally = field(default_factory=SolveTally)
    lam_ratio: Optional[float] = None


def init_state(model: SquaredSlownessModel, problem: WriProblem) -> WriState:
    """Multipliers start from the physical right-hand sides."""
    return WriState(model, problem.b.astype(complex), problem.d.astype(complex))


@dataclass(frozen=True)
class IterationLog:
    iteration: int
    freq_hz: float
    data_residual: float
    wave_residual_mean: float
    model_rel_error: Optional[float]
    forward_solves: int
    backward_solves: int
    lam_ratio: float
    dead_points: int = 0
    receiver_seed: Optional[int] = None
    source_seed: Optional[int] = None

    CSV_HEADER = ("iteration", "freq_hz", "data_residual", "wave_residual_mean", "model_rel_error",
                  "forward_solves", "backward_solves", "lam_ratio")

    def csv_row(self) -> list:
        err = "" if self.model_rel_error is None else f"{self.model_rel_error:.8e}"
        return [self.iteration, self.freq_hz, f"{self.data_residual:.8e}", f"{self.wave_residual_mean:.8e}",
                err, self.forward_solves, self.backward_solves, f"{self.lam_ratio:.8e}"]


def _flat(batch: np.ndarray) -> np.ndarray:
    return batch.reshape(batch.shape[0], -1)


def forward_map(op: HelmholtzOperator, P: ObservationOperator, sources: np.ndarray,
                tally: SolveTally | None = None) -> np.ndarray:
    """Simulated data ``P A^-1 b`` as an ``(nr, ns)`` matrix."""
    sources = np.asarray(sources, dtype=complex)
    ns = sources.shape[0]
    if ns == 0 or not np.any(sources):
        return np.zeros((P.nr, ns), complex)
    u, _ = op.solve_many(sources)
    if tally is not None:
        tally.forward += ns
    return P.sample(u).T


def adjoint_columns(op: HelmholtzOperator, P: ObservationOperator, sketch: SketchOperator | None = None,
                    tally: SolveTally | None = None) -> np.ndarray:
    """Columns of ``S^H = A^-H P^T`` (or ``A^-H P^T X``) as a field batch."""
    impulses = P.inject(np.eye(P.nr))
    if sketch is not None:
        impulses = sketch_receivers(P, impulses, sketch)
    # A^-H v = conj(A^-T conj(v))
    cols, _ = op.solve_many_transposed(np.conj(impulses))
    if tally is not None:
        tally.backward += impulses.shape[0]
    return np.conj(cols)


def apply_modeling(cols: np.ndarray, fields: np.ndarray) -> np.ndarray:
    """``S x`` for a field batch, from the adjoint columns: ``<c_i, x_s>``."""
    return _flat(cols).conj() @ _flat(fields).T


def gram(cols: np.ndarray) -> np.ndarray:
    """``S S^H``: inner products of the adjoint columns over the whole grid."""
    c = _flat(cols)
    return c.conj() @ c.T


def reduced_residual(lambda_d: np.ndarray, cols: np.ndarray, lambda_b: np.ndarray) -> np.ndarray:
    """``lambda_d - S lambda_b`` in the (possibly blended) receiver space."""
    return lambda_d - apply_modeling(cols, lambda_b)


def solve_data_normal(G: np.ndarray, lam_ratio: float, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(G + lam_ratio I) de = dr`` by Cholesky after symmetrizing G."""
    if lam_ratio <= 0:
        raise ValueError("lam_ratio must be positive")
    H = 0.5 * (G + G.conj().T) + lam_ratio * np.eye(G.shape[0])
    try:
        factor = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"data-space normal matrix is not positive definite ({exc}); increase lam_ratio") from exc
    return scipy.linalg.cho_solve(factor, np.asarray(rhs, dtype=complex), check_finite=False)


def reconstruct_da_wavefields(op: HelmholtzOperator, lambda_b: np.ndarray, cols: np.ndarray,
                              delta_de: np.ndarray, tally: SolveTally | None = None) -> np.ndarray:
    """``u_s = A^-1 (lambda_b,s + S^H de_s)``, one solve per source."""
    extension = np.tensordot(delta_de.T, cols, axes=1)
    u, _ = op.solve_many(lambda_b + extension)
    if tally is not None:
        tally.forward += lambda_b.shape[0]
    return u


def model_objective(m: np.ndarray, m_prior: np.ndarray, u: np.ndarray, rhs: np.ndarray, omega: float,
                    lam0: float, gamma: float, grid: Grid2D) -> float:
    """Model-subproblem objective restricted to the interior grid.

    ``gamma/2 ||m - m_prior||^2 + lam0/2 sum_s ||rhs_s - lap u_s - omega^2 m u_s||^2``
    """
    sl = (slice(None),) + grid.interior
    r = (rhs - spectral_laplacian(u, grid))[sl] - omega ** 2 * m * u[sl]
    return 0.5 * gamma * float(np.sum((m - m_prior) ** 2)) + 0.5 * lam0 * float(np.sum(np.abs(r) ** 2))


def update_model(model: SquaredSlownessModel, u: np.ndarray, rhs: np.ndarray, omega: float,
                 lam0: float, gamma: float = 0.0, bounds: tuple[float, float] | None = None):
    """Per-point minimizer of :func:`model_objective`, then box projection.

    Returns ``(new_model, dead)`` where ``dead`` counts points with no
    wavefield energy and no regularization, which keep their prior value.
    """
    grid = model.grid
    sl = (slice(None),) + grid.interior
    ui = u[sl]
    ri = (rhs - spectral_laplacian(u, grid))[sl]
    prior = model.values
    num = gamma * prior + lam0 * omega ** 2 * np.sum(np.real(np.conj(ui) * ri), axis=0)
    den = gamma + lam0 * omega ** 4 * np.sum(np.abs(ui) ** 2, axis=0)
    dead = den <= 1e-300 + 1e-14 * den.max()
    m = np.where(dead, prior, num / np.where(dead, 1.0, den))
    lo, hi = bounds if bounds is not None else model.bounds
    m = np.clip(m, lo, hi)
    n_dead = int(dead.sum())
    if n_dead:
        log.debug("model update: %d dead points kept their prior value", n_dead)
    return SquaredSlownessModel(grid, m, (lo, hi)), n_dead


def update_multipliers(lambda_b: np.ndarray, lambda_d: np.ndarray, b: np.ndarray, d: np.ndarray,
                       u: np.ndarray, op_new: HelmholtzOperator, P: ObservationOperator):
    """Ascent steps ``lambda_b += b - A(m_new) u`` and ``lambda_d += d - P u``."""
    return lambda_b + (b - op_new.apply(u)), lambda_d + (d - P.sample(u).T)


def validate_model_from_wavefield(u: np.ndarray, b: np.ndarray, omega: float, grid: Grid2D,
                                  amp_floor: float = 1e-3):
    """Recover ``m = (b - lap u) / (omega^2 u)`` pointwise on the interior.

    Points with ``|u| < amp_floor * max|u|`` are excluded; returns
    ``(m, mask)`` with ``mask`` true on the points that were computed.
    """
    if amp_floor <= 0:
        raise ValueError("amp_floor must be positive")
    u = np.asarray(u, dtype=complex)
    ratio_num = (np.asarray(b, dtype=complex) - spectral_laplacian(u, grid))[grid.interior]
    ui = u[grid.interior]
    mask = np.abs(ui) >= amp_floor * np.abs(ui).max()
    m = np.full(grid.shape, np.nan)
    m[mask] = np.real(ratio_num[mask] / (omega ** 2 * ui[mask]))
    return m, mask


def wri_iterate(state: WriState, problem: WriProblem, cfg: WriConfig,
                sketch: SketchConfig | None = None, make_operator: OperatorFactory = HelmholtzOperator,
                truth: SquaredSlownessModel | None = None, sketch_iteration: int | None = None,
                operators: tuple | None = None):
    """One outer iteration; returns ``(new_state, IterationLog)``.

    ``operators`` is an explicit ``(X, Y)`` pair of sketch operators (either
    may be ``None``) that takes precedence over ``sketch``.
    """
    omega, P = problem.omega, problem.P
    tally = replace(state.tally)
    op = make_operator(state.model, omega, cfg.solver)

    X = Y = None
    if operators is not None:
        X, Y = operators
    elif sketch is not None:
        counter = state.iteration if sketch_iteration is None else sketch_iteration
        X, Y = regenerate(sketch, counter, P.nr, problem.b.shape[0], problem.frequency)

    cols = adjoint_columns(op, P, X, tally)
    if Y is not None:
        _, lam_b, lam_d = sketch_sources(problem.b, state.lambda_b, state.lambda_d, Y)
    else:
        lam_b, lam_d = state.lambda_b, state.lambda_d
    if X is not None:
        lam_d = X.entries.T @ lam_d

    G = gram(cols)
    lam_ratio = state.lam_ratio
    if lam_ratio is None:
        if cfg.lam0 is not None:
            lam_ratio = cfg.lam0 / cfg.lam1
        else:
            lam_ratio = cfg.lam0_fraction * float(np.linalg.eigvalsh(0.5 * (G + G.conj().T)).max())
    dr = reduced_residual(lam_d, cols, lam_b)
    de = solve_data_normal(G, lam_ratio, dr)
    u = reconstruct_da_wavefields(op, lam_b, cols, de, tally)

    lam0 = lam_ratio * cfg.lam1
    energy = np.sum(np.abs(u[(slice(None),) + state.model.grid.interior]) ** 2, axis=0)
    gamma = cfg.tikhonov_weight * lam0 * omega ** 4 * float(energy.max())
    new_model, dead = update_model(state.model, u, lam_b, omega, lam0, gamma, cfg.bounds)

    op_new = HelmholtzOperator(new_model, omega, cfg.solver)
    if Y is None:
        b_it, d_it = problem.b, problem.d
        lambda_b, lambda_d = update_multipliers(state.lambda_b, state.lambda_d, b_it, d_it, u, op_new, P)
    else:
        # ascent in the sketched space, lifted back to per-source multipliers
        # with the same weights; the lift vanishes with the sketched residual
        b_it, _, d_it = sketch_sources(problem.b, state.lambda_b, problem.d, Y)
        inc_b, inc_d = update_multipliers(0.0, 0.0, b_it, d_it, u, op_new, P)
        lambda_b = state.lambda_b + np.tensordot(Y.entries, inc_b, axes=1)
        lambda_d = state.lambda_d + inc_d @ Y.entries.T

    # residuals are measured in the space the iteration worked in
    data_res = float(np.linalg.norm(d_it - P.sample(u).T) / np.linalg.norm(d_it))
    wave_res = op_new.apply(u) - b_it
    bn = np.linalg.norm(_flat(b_it), axis=1)
    wave_mean = float(np.mean(np.linalg.norm(_flat(wave_res), axis=1) / np.where(bn > 0, bn, 1.0)))
    err = new_model.relative_error(truth) if truth is not None else None

    new_state = WriState(new_model, lambda_b, lambda_d, state.iteration + 1, tally, lam_ratio)
    entry = IterationLog(state.iteration, problem.frequency, data_res, wave_mean, err, tally.forward,
                         tally.backward, lam_ratio, dead,
                         X.seed if X is not None else None, Y.seed if Y is not None else None)
    log.info("iter %d f=%.3g Hz data_res=%.3e wave_res=%.3e err=%s", entry.iteration, entry.freq_hz,
             data_res, wave_mean, "-" if err is None else f"{err:.4e}")
    return new_state, entry
