"""Oracle equivalence and wavefield-accuracy checks on small grids.

Shared by the ``validate`` subcommand and the test suite.  Each check
returns :class:`CheckResult` records carrying the measured value and the
threshold it was held to.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .cbs import CbsConfig, CbsDivergenceError, HelmholtzOperator
from .grid import AcquisitionGeometry, Grid2D, SquaredSlownessModel
from .oracle import DENSE_CAP, DenseHelmholtz, OracleCapError, cbs_spectral_radius, \
    solve_augmented_normal
from .wri import adjoint_columns, gram, reconstruct_da_wavefields, reduced_residual, solve_data_normal, \
    validate_model_from_wavefield


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} (threshold {self.threshold:.1e})"


def random_smooth_model(grid: Grid2D, rng, vmin=1500.0, vmax=2500.0, sigma=None) -> SquaredSlownessModel:
    """Velocity field smoothed from white noise and stretched to [vmin, vmax]."""
    sigma = max(grid.nx, grid.nz) / 6 if sigma is None else sigma
    raw = gaussian_filter(rng.standard_normal(grid.shape), sigma, mode="wrap")
    raw = (raw - raw.min()) / (raw.max() - raw.min())
    v = vmin + (vmax - vmin) * raw
    return SquaredSlownessModel.from_velocity(grid, v, (1 / vmax ** 2, 1 / vmin ** 2))


def _random_nodes(grid: Grid2D, rng, k: int):
    flat = rng.choice(grid.nx * grid.nz, size=k, replace=False)
    iz, ix = np.unravel_index(flat, grid.shape)
    return [(grid.dx * x, grid.dx * z) for z, x in zip(iz, ix)]


def random_instance(rng, max_n=12, pad=4, dx=20.0, freq=6.0, ns_range=(1, 3), nr_range=(2, 6)):
    """Random (model, geometry, omega) with a grid no larger than ``max_n``."""
    nx, nz = rng.integers(6, max_n + 1, size=2)
    grid = Grid2D(int(nx), int(nz), dx, pad)
    model = random_smooth_model(grid, rng)
    ns = int(rng.integers(ns_range[0], ns_range[1] + 1))
    nr = int(rng.integers(nr_range[0], nr_range[1] + 1))
    geom = AcquisitionGeometry(_random_nodes(grid, rng, ns), _random_nodes(grid, rng, nr))
    return model, geom, 2 * np.pi * freq


def da_equivalence(n_instances=25, max_n=12, seed=0, tol=1e-10,
                   lam_range=(1e-4, 1.0)) -> list[CheckResult]:
    """DA wavefields from the data-space route vs the stacked least-squares solve."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_instances):
        model, geom, omega = random_instance(rng, max_n)
        grid = model.grid
        P = geom.observation(grid)
        b = geom.source_fields(grid).astype(complex)
        lam_ratio = float(np.exp(rng.uniform(*np.log(lam_range))))
        # observed data come from a perturbed model so the data term matters
        jitter = (1 + 0.1 * rng.standard_normal(grid.shape)).clip(0.8, 1.2)
        other = SquaredSlownessModel(grid, model.values * jitter, (0.5 * model.bounds[0], 2 * model.bounds[1]))
        d = P.sample(DenseHelmholtz(other, omega).solve_many(b)[0]).T
        op = DenseHelmholtz(model, omega)
        cols = adjoint_columns(op, P)
        de = solve_data_normal(gram(cols), lam_ratio, reduced_residual(d, cols, b))
        u = reconstruct_da_wavefields(op, b, cols, de)
        ref = solve_augmented_normal(model, omega, P, lam_ratio, 1.0, b, d)
        err = float(np.linalg.norm(u - ref) / np.linalg.norm(ref))
        out.append(CheckResult(f"da_equivalence[{k}] {grid.nz}x{grid.nx} ns={geom.ns} nr={geom.nr} "
                               f"lam={lam_ratio:.1e}", err, tol, err <= tol))
    return out


def cbs_vs_dense(n_instances=20, n=24, pad=8, eta=1e-8, tol=None, seed=1, freq=6.0,
                 dx=20.0) -> list[CheckResult]:
    """CBS against LU on random smooth models with a random complex source."""
    tol = 10 * eta if tol is None else tol
    grid = Grid2D(n, n, dx, pad)
    if grid.n_padded > DENSE_CAP:
        raise OracleCapError(f"{grid.n_padded} padded unknowns exceed the dense oracle cap of {DENSE_CAP}")
    rng = np.random.default_rng(seed)
    cfg = CbsConfig(eta=eta)
    out = []
    for k in range(n_instances):
        model = random_smooth_model(grid, rng)
        omega = 2 * np.pi * freq
        b = rng.standard_normal(grid.padded_shape) + 1j * rng.standard_normal(grid.padded_shape)
        u, rep = HelmholtzOperator(model, omega, cfg).solve(b)
        ref = DenseHelmholtz(model, omega).solve(b)[0]
        err = float(np.linalg.norm(u - ref) / np.linalg.norm(ref))
        out.append(CheckResult(f"cbs_vs_dense[{k}] {n}x{n} iters={rep.iters}", err, tol,
                               rep.converged and err <= tol))
    return out


def pointwise_error(model: SquaredSlownessModel, omega: float, b: np.ndarray, u: np.ndarray,
                    amp_floor: float = 1e-3) -> float:
    """Relative L2 error of the model recovered by pointwise division, on unmasked points."""
    m, mask = validate_model_from_wavefield(u, b, omega, model.grid, amp_floor)
    truth = model.values[mask]
    return float(np.linalg.norm(m[mask] - truth) / np.linalg.norm(truth))


def pointwise_diagnostic(model: SquaredSlownessModel, omega: float, b: np.ndarray, etas,
                         cfg: CbsConfig | None = None) -> dict[float, float]:
    """Pointwise-division model error for CBS wavefields at each ``eta``."""
    cfg = cfg or CbsConfig()
    errors = {}
    for eta in etas:
        u, _ = HelmholtzOperator(model, omega, replace(cfg, eta=eta)).solve(b)
        errors[eta] = pointwise_error(model, omega, b, u)
    return errors


def radius_agreement(model: SquaredSlownessModel, omega: float, factor: float, b: np.ndarray,
                     max_iters: int = 20000):
    """Spectral radius at ``factor * bound`` and whether CBS actually converged.

    Returns ``(radius, converged)``; divergence and stalling both count as
    non-convergence.
    """
    op = HelmholtzOperator(model, omega)
    eps = factor * op.eps_bound
    radius = cbs_spectral_radius(model, omega, op.k0_sq, eps)
    cfg = CbsConfig(eta=1e-8, eps_override=eps, max_iters=max_iters)
    try:
        _, rep = HelmholtzOperator(model, omega, cfg).solve(b)
        converged = rep.converged
    except CbsDivergenceError:
        converged = False
    return radius, converged


def default_battery(n=12, instances=5, eta=1e-8, tol=1e-6, seed=0) -> list[CheckResult]:
    """What ``validate`` runs: both oracle equivalences and the division diagnostic."""
    pad = 8
    if (n + 2 * pad) ** 2 > DENSE_CAP:
        raise OracleCapError(f"validation grid {n}x{n} with pad {pad} exceeds the dense oracle cap of {DENSE_CAP}")
    results = da_equivalence(instances, max_n=n, seed=seed)
    results += cbs_vs_dense(instances, n=n, pad=pad, eta=eta, seed=seed + 1)
    rng = np.random.default_rng(seed + 2)
    grid = Grid2D(n, n, 20.0, pad)
    model = random_smooth_model(grid, rng)
    omega = 2 * np.pi * 6.0
    geom = AcquisitionGeometry([(grid.dx * (n // 2), grid.dx * (n // 2))], [(0.0, 0.0)])
    b = geom.source_fields(grid)[0]
    err = pointwise_diagnostic(model, omega, b, [eta])[eta]
    results.append(CheckResult(f"pointwise_division eta={eta:.0e}", err, tol, err <= tol))
    exact = DenseHelmholtz(model, omega).solve(b)[0]
    err = pointwise_error(model, omega, b, exact)
    results.append(CheckResult("pointwise_division dense", err, 1e-8, err <= 1e-8))
    return results
