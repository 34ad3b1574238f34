import numpy as np
import pytest

from cbswri.cbs import HelmholtzOperator
from cbswri.grid import AcquisitionGeometry, Grid2D, ObservationOperator, SquaredSlownessModel
from cbswri.oracle import (
    DENSE_CAP,
    DenseOperator,
    OracleCapError,
    assemble_helmholtz,
    cbs_spectral_radius,
    direct_solve,
    largest_eig_data_normal,
    solve_augmented_normal,
    spectral_second_derivative,
)

from helpers import smooth_model


def homogeneous(n=4, pad=0, v=2000.0, dx=20.0):
    g = Grid2D(n, n, dx, pad)
    return SquaredSlownessModel(g, np.full(g.shape, 1 / v ** 2))


def test_second_derivative_matches_fft():
    D = spectral_second_derivative(8, 0.5)
    x = np.random.default_rng(0).standard_normal(8)
    k = 2 * np.pi * np.fft.fftfreq(8, d=0.5)
    np.testing.assert_allclose(D @ x, np.fft.ifft(-(k ** 2) * np.fft.fft(x)).real, atol=1e-12)
    assert np.array_equal(D, D.T)


def test_assembly_columns_match_apply():
    model = smooth_model(Grid2D(4, 4, 20.0, 0), np.random.default_rng(1), 1500, 2500, 1.0)
    omega = 2 * np.pi * 5
    A = assemble_helmholtz(model, omega).entries
    op = HelmholtzOperator(model, omega)
    for j in range(16):
        e = np.zeros(16, complex)
        e[j] = 1
        np.testing.assert_allclose(A[:, j], op.apply(e.reshape(4, 4)).ravel(), atol=1e-14)


def test_cap_is_enforced():
    big = homogeneous(n=66)  # 4356 unknowns
    assert big.grid.n_padded > DENSE_CAP
    with pytest.raises(OracleCapError):
        assemble_helmholtz(big, 1.0)
    assemble_helmholtz(homogeneous(n=4), 1.0, cap=16)
    with pytest.raises(OracleCapError):
        assemble_helmholtz(homogeneous(n=4), 1.0, cap=15)


def test_direct_solve_batch_and_singular():
    model = homogeneous(n=6, pad=4)
    Aop = assemble_helmholtz(model, 2 * np.pi * 5)
    rng = np.random.default_rng(2)
    b = rng.standard_normal((3,) + model.grid.padded_shape) + 0j
    u = direct_solve(Aop, b)
    assert np.linalg.norm(Aop @ u.reshape(3, -1).T - b.reshape(3, -1).T) <= 1e-10 * np.linalg.norm(b)
    with pytest.raises(np.linalg.LinAlgError), pytest.warns(Warning):
        direct_solve(DenseOperator(2, np.zeros((2, 2), complex)), np.ones(2))


class TestAugmented:
    @pytest.fixture
    def setup(self):
        g = Grid2D(6, 6, 20.0, 4)
        model = smooth_model(g, np.random.default_rng(3), 1800, 2200, 1.5)
        geom = AcquisitionGeometry([(40.0, 40.0)], [(0.0, 0.0), (100.0, 60.0), (60.0, 100.0)])
        return model, geom.observation(g), geom.source_fields(g), 2 * np.pi * 6

    def test_no_data_weight_gives_plain_solve(self, setup):
        model, P, b, omega = setup
        d = np.ones((P.nr, 1), complex)
        u = solve_augmented_normal(model, omega, P, 1.0, 0.0, b, d)
        ref = direct_solve(assemble_helmholtz(model, omega), b)
        assert np.linalg.norm(u - ref) <= 1e-10 * np.linalg.norm(ref)

    def test_consistent_data_recovers_field(self, setup):
        model, P, b, omega = setup
        ref = direct_solve(assemble_helmholtz(model, omega), b)
        d = P.sample(ref).T
        for lam in (1e-3, 1.0, 1e3):
            u = solve_augmented_normal(model, omega, P, lam, 1.0, b, d)
            assert np.linalg.norm(u - ref) <= 1e-9 * np.linalg.norm(ref)

    def test_rejects_bad_weights(self, setup):
        model, P, b, omega = setup
        with pytest.raises(ValueError):
            solve_augmented_normal(model, omega, P, 0.0, 1.0, b, np.zeros((P.nr, 1)))


@pytest.fixture(scope="module")
def contrast():
    g = Grid2D(8, 8, 20.0, 4)
    return smooth_model(g, np.random.default_rng(4), 1500, 4500, 1.5), 2 * np.pi * 8


class TestSpectralRadius:
    def test_converges_at_bound(self, contrast):
        model, omega = contrast
        op = HelmholtzOperator(model, omega)
        assert cbs_spectral_radius(model, omega, op.k0_sq, op.eps_bound) < 1

    def test_diverges_below_bound(self, contrast):
        model, omega = contrast
        op = HelmholtzOperator(model, omega)
        assert cbs_spectral_radius(model, omega, op.k0_sq, 0.3 * op.eps_bound) > 1

    def test_homogeneous_is_small(self):
        g = Grid2D(8, 8, 20.0, 0)
        model = SquaredSlownessModel(g, np.full(g.shape, 1 / 2000.0 ** 2))
        op = HelmholtzOperator(model, 2 * np.pi * 6)
        # with no pad there is no contrast, so only the eps floor remains
        assert cbs_spectral_radius(model, 2 * np.pi * 6, op.k0_sq, op.eps) < 1e-6


class TestLargestEig:
    def test_single_receiver(self):
        g = Grid2D(6, 6, 20.0, 4)
        model = smooth_model(g, np.random.default_rng(5), 1800, 2200, 1.5)
        omega = 2 * np.pi * 6
        P = ObservationOperator.from_positions(g, [(40.0, 60.0)])
        A = assemble_helmholtz(model, omega).entries
        row = np.linalg.solve(A.T, P.matrix().T).ravel()
        assert largest_eig_data_normal(model, omega, P) == pytest.approx(np.vdot(row, row).real, rel=1e-10)

    def test_duplicate_receiver_doubles(self):
        g = Grid2D(6, 6, 20.0, 4)
        model = smooth_model(g, np.random.default_rng(6), 1800, 2200, 1.5)
        omega = 2 * np.pi * 6
        one = largest_eig_data_normal(model, omega, ObservationOperator.from_positions(g, [(40.0, 60.0)]))
        two = largest_eig_data_normal(model, omega,
                                      ObservationOperator.from_positions(g, [(40.0, 60.0), (40.0, 60.0)]))
        assert two == pytest.approx(2 * one, rel=1e-10)

    def test_power_matches_dense(self):
        g = Grid2D(10, 10, 20.0, 8)
        model = smooth_model(g, np.random.default_rng(7), 1800, 2200, 2.0)
        omega = 2 * np.pi * 6
        P = ObservationOperator.from_positions(g, [(20.0 * i, 0.0) for i in range(10)])
        dense = largest_eig_data_normal(model, omega, P, method="dense")
        power = largest_eig_data_normal(model, omega, P, method="power", tol=1e-6, max_iter=500)
        assert power == pytest.approx(dense, rel=1e-3)

    def test_unknown_method(self):
        model = homogeneous(n=4, pad=2)
        with pytest.raises(ValueError):
            largest_eig_data_normal(model, 1.0, ObservationOperator.from_positions(model.grid, [(0.0, 0.0)]),
                                    method="lanczos")
