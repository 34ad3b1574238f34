"""Shared builders for small test instances."""
import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import hankel2

from cbswri.grid import AcquisitionGeometry, Grid2D, SquaredSlownessModel


def smooth_velocity(shape, rng, vmin, vmax, sigma=3.0):
    """Random smooth velocity field spanning [vmin, vmax]."""
    raw = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    raw = (raw - raw.min()) / (raw.max() - raw.min())
    return vmin + (vmax - vmin) * raw


def smooth_model(grid, rng, vmin=1500.0, vmax=2500.0, sigma=3.0):
    v = smooth_velocity(grid.shape, rng, vmin, vmax, sigma)
    return SquaredSlownessModel.from_velocity(grid, v, (1 / vmax ** 2, 1 / vmin ** 2))


def random_geometry(grid, rng, ns, nr):
    def pick(k):
        flat = rng.choice(grid.nx * grid.nz, size=k, replace=False)
        iz, ix = np.unravel_index(flat, grid.shape)
        return [(grid.dx * x, grid.dx * z) for z, x in zip(iz, ix)]
    return AcquisitionGeometry(pick(ns), pick(nr))


def analytic_green(k, r):
    """Outgoing solution of ``(lap + k^2) g = delta`` for the exp(+i w t) convention."""
    return 0.25j * hankel2(0, k * np.maximum(r, 1e-12))


def point_source_instance(n=64, ppw=8.0, velocity=2000.0, freq=10.0, pad_wavelengths=1.5):
    """Homogeneous grid with a centred point source; returns pieces for Green checks."""
    lam = velocity / freq
    dx = lam / ppw
    pad = int(np.ceil(pad_wavelengths * lam / dx))
    grid = Grid2D(n, n, dx, pad)
    model = SquaredSlownessModel.from_velocity(grid, velocity)
    centre = (n // 2) * dx
    geom = AcquisitionGeometry([(centre, centre)], [(0.0, 0.0)])
    z, x = np.mgrid[0:n, 0:n] * dx
    r = np.hypot(x - centre, z - centre)
    return grid, model, geom, r, 2 * np.pi * freq / velocity, lam


def green_error(u_interior, k, r, lam, min_wavelengths=2.0):
    """Relative L2 error against the analytic Green's function beyond a radius."""
    g = analytic_green(k, r)
    mask = r >= min_wavelengths * lam
    return float(np.linalg.norm(u_interior[mask] - g[mask]) / np.linalg.norm(g[mask]))


def two_inclusion_model(grid, background=2000.0, contrast=0.2):
    z, x = np.mgrid[0:grid.nz, 0:grid.nx] * grid.dx
    cx, cz = grid.nx * grid.dx, grid.nz * grid.dx
    m = np.full(grid.shape, 1 / background ** 2)
    a = np.hypot(x - 0.3 * cx, z - 0.35 * cz) < 0.12 * cx
    b = np.hypot(x - 0.68 * cx, z - 0.62 * cz) < 0.1 * cx
    m[a] *= 1 + contrast
    m[b] *= 1 - contrast / 2
    return SquaredSlownessModel(grid, m, (m.min(), m.max()))


def small_problem(n=10, pad=8, ns=2, nr=4, seed=0, freq=6.0, dx=20.0, dense=True):
    """Truth and starting models plus a WriProblem with noiseless data.

    Data come from the dense solver when ``dense`` is set, otherwise from a
    tight CBS solve.
    """
    from cbswri.cbs import CbsConfig, HelmholtzOperator
    from cbswri.oracle import DenseHelmholtz
    from cbswri.wri import WriProblem

    rng = np.random.default_rng(seed)
    grid = Grid2D(n, n, dx, pad)
    truth = smooth_model(grid, rng, 1500.0, 2500.0, sigma=max(n / 6, 1.0))
    start = SquaredSlownessModel(grid, gaussian_filter(truth.values, 3.0, mode="nearest"), truth.bounds)
    geom = random_geometry(grid, rng, ns, nr)
    P = geom.observation(grid)
    b = geom.source_fields(grid).astype(complex)
    omega = 2 * np.pi * freq
    op = DenseHelmholtz(truth, omega) if dense else HelmholtzOperator(truth, omega, CbsConfig(eta=1e-12))
    u, _ = op.solve_many(b)
    return truth, start, WriProblem(freq, P, b, P.sample(u).T), rng


# acceptance lines collected during the run, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed
