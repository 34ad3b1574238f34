import numpy as np
import pytest
from dataclasses import replace

from cbswri.cbs import CbsConfig, HelmholtzOperator
from cbswri.grid import AcquisitionGeometry, Grid2D, ObservationOperator, SquaredSlownessModel
from cbswri.oracle import (
    DenseHelmholtz,
    assemble_helmholtz,
    data_normal_dense,
    dense_factory,
    direct_solve,
    solve_augmented_normal,
)
from cbswri.sketching import SketchOperator
from cbswri.wri import (
    SolveTally,
    WriConfig,
    WriProblem,
    adjoint_columns,
    forward_map,
    gram,
    init_state,
    model_objective,
    reconstruct_da_wavefields,
    reduced_residual,
    solve_data_normal,
    update_model,
    update_multipliers,
    validate_model_from_wavefield,
    wri_iterate,
)

from helpers import analytic_green, point_source_instance, small_problem, smooth_model

ETA = 1e-8


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture(scope="module")
def inst():
    truth, start, problem, rng = small_problem(n=10, pad=8, ns=2, nr=5, seed=21)
    return truth, start, problem


class TestForwardMap:
    def test_zero_sources(self, inst):
        truth, _, problem = inst
        tally = SolveTally()
        out = forward_map(HelmholtzOperator(truth, problem.omega), problem.P, np.zeros_like(problem.b), tally)
        np.testing.assert_array_equal(out, 0)
        assert tally.forward == 0

    def test_matches_dense(self, inst):
        truth, _, problem = inst
        tally = SolveTally()
        d = forward_map(HelmholtzOperator(truth, problem.omega, CbsConfig(eta=ETA)), problem.P, problem.b, tally)
        assert rel(d, problem.d) <= 10 * ETA
        assert tally.forward == 2

    def test_single_receiver_green(self):
        grid, model, geom, r, k, lam = point_source_instance()
        centre = geom.sources[0]
        recv = (centre[0] + 3 * lam, centre[1])
        P = ObservationOperator.from_positions(grid, [recv])
        d = forward_map(HelmholtzOperator(model, 2 * np.pi * 10.0), P, geom.source_fields(grid))
        g = analytic_green(k, 3 * lam)
        assert abs(d[0, 0] - g) / abs(g) <= 0.02


class TestAdjointColumns:
    def test_single_receiver_is_green(self, inst):
        truth, _, problem = inst
        P = ObservationOperator(problem.P.grid, problem.P.iz[:1], problem.P.ix[:1])
        op = DenseHelmholtz(truth, problem.omega)
        cols = adjoint_columns(op, P)
        g = direct_solve(op.dense, P.inject(np.ones(1)))
        np.testing.assert_allclose(cols[0], np.conj(g), rtol=1e-12, atol=1e-14 * np.abs(g).max())

    def test_identity_sketch(self, inst):
        truth, _, problem = inst
        op = HelmholtzOperator(truth, problem.omega)
        np.testing.assert_array_equal(adjoint_columns(op, problem.P, SketchOperator.identity(5)),
                                      adjoint_columns(op, problem.P))

    def test_gram_matches_dense(self, inst):
        truth, _, problem = inst
        tally = SolveTally()
        cols = adjoint_columns(HelmholtzOperator(truth, problem.omega, CbsConfig(eta=ETA)), problem.P,
                               tally=tally)
        ref = data_normal_dense(truth, problem.omega, problem.P)
        assert rel(gram(cols), ref) <= 10 * ETA
        assert tally.backward == 5


class TestReducedResidual:
    def test_true_model_zero(self, inst):
        truth, _, problem = inst
        cols = adjoint_columns(HelmholtzOperator(truth, problem.omega, CbsConfig(eta=1e-10)), problem.P)
        dr = reduced_residual(problem.d, cols, problem.b)
        assert np.linalg.norm(dr) <= 1e-8 * np.linalg.norm(problem.d)

    def test_zero_multiplier(self, inst):
        truth, _, problem = inst
        cols = adjoint_columns(HelmholtzOperator(truth, problem.omega), problem.P)
        np.testing.assert_array_equal(reduced_residual(problem.d, cols, np.zeros_like(problem.b)), problem.d)

    def test_wrong_model_matches_dense(self, inst):
        truth, _, problem = inst
        start = truth.with_values(np.full(truth.grid.shape, 1 / 2000.0 ** 2))
        cols = adjoint_columns(HelmholtzOperator(start, problem.omega, CbsConfig(eta=ETA)), problem.P)
        u = direct_solve(assemble_helmholtz(start, problem.omega), problem.b)
        ref = problem.d - problem.P.sample(u).T
        # measured on the data scale: the residual is a difference of O(d) terms
        err = np.linalg.norm(reduced_residual(problem.d, cols, problem.b) - ref) / np.linalg.norm(problem.d)
        assert err <= 10 * ETA


class TestDataNormal:
    def setup_method(self):
        rng = np.random.default_rng(0)
        B = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        self.G = B @ B.conj().T
        self.rhs = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))

    def test_zero_rhs(self):
        np.testing.assert_array_equal(solve_data_normal(self.G, 0.1, np.zeros((4, 2))), 0)

    def test_large_ratio_limit(self):
        out = solve_data_normal(self.G, 1e8, self.rhs)
        assert rel(out, self.rhs / 1e8) <= 1e-6

    def test_matches_direct(self):
        out = solve_data_normal(self.G, 0.3, self.rhs)
        ref = np.linalg.solve(self.G + 0.3 * np.eye(4), self.rhs)
        assert rel(out, ref) <= 1e-10

    def test_errors(self):
        with pytest.raises(ValueError):
            solve_data_normal(self.G, 0.0, self.rhs)
        with pytest.raises(np.linalg.LinAlgError, match="lam_ratio"):
            solve_data_normal(-self.G, 1e-3, self.rhs)


class TestReconstruct:
    def test_zero_extension(self, inst):
        _, start, problem = inst
        op = DenseHelmholtz(start, problem.omega)
        cols = adjoint_columns(op, problem.P)
        u = reconstruct_da_wavefields(op, problem.b, cols, np.zeros((5, 2)))
        np.testing.assert_allclose(u, op.solve_many(problem.b)[0], rtol=0, atol=0)

    def test_true_model_fits_data(self, inst):
        truth, _, problem = inst
        op = HelmholtzOperator(truth, problem.omega, CbsConfig(eta=ETA))
        cols = adjoint_columns(op, problem.P)
        G = gram(cols)
        de = solve_data_normal(G, 1e-2 * np.linalg.eigvalsh(G).max(), reduced_residual(problem.d, cols, problem.b))
        u = reconstruct_da_wavefields(op, problem.b, cols, de)
        assert rel(problem.P.sample(u).T, problem.d) <= 10 * ETA

    def test_matches_augmented_normal(self):
        truth, start, problem, _ = small_problem(n=12, pad=3, ns=1, nr=4, seed=22)
        op = DenseHelmholtz(start, problem.omega)
        lam_ratio = 3e-3
        cols = adjoint_columns(op, problem.P)
        de = solve_data_normal(gram(cols), lam_ratio, reduced_residual(problem.d, cols, problem.b))
        u = reconstruct_da_wavefields(op, problem.b, cols, de)
        ref = solve_augmented_normal(start, problem.omega, problem.P, lam_ratio, 1.0, problem.b, problem.d)
        assert rel(u, ref) <= 1e-10


class TestModelUpdate:
    omega = 2 * np.pi * 6.0

    def test_exact_field_recovers_truth(self, inst):
        truth, start, problem = inst
        u = DenseHelmholtz(truth, problem.omega).solve_many(problem.b[:1])[0]
        wide = (0.5 * truth.values.min(), 2 * truth.values.max())
        new, dead = update_model(start, u, problem.b[:1], problem.omega, lam0=1.0, bounds=wide)
        assert dead == 0
        assert rel(new.values, truth.values) <= 1e-8

    def test_zero_field_keeps_model(self, inst):
        _, start, problem = inst
        new, dead = update_model(start, np.zeros_like(problem.b), problem.b, problem.omega, 1.0, gamma=2.0)
        np.testing.assert_array_equal(new.values, start.values)
        assert dead == 0
        new, dead = update_model(start, np.zeros_like(problem.b), problem.b, problem.omega, 1.0, gamma=0.0)
        np.testing.assert_array_equal(new.values, start.values)
        assert dead == start.values.size

    def test_bounds_projection(self):
        g = Grid2D(4, 4, 10.0)
        m = SquaredSlownessModel.from_velocity(g, 2000.0, (1e-7, 3e-7))
        u = np.ones((1, 4, 4), complex)
        rhs = np.full((1, 4, 4), self.omega ** 2 * 1e-5 + 0j)  # would give m = 1e-5
        new, _ = update_model(m, u, rhs, self.omega, lam0=1.0)
        np.testing.assert_array_equal(new.values, 3e-7)


class TestMultipliers:
    def test_satisfied_constraints(self, inst):
        truth, _, problem = inst
        op = HelmholtzOperator(truth, problem.omega)
        u = DenseHelmholtz(truth, problem.omega).solve_many(problem.b)[0]
        lb, ld = update_multipliers(problem.b, problem.d, problem.b, problem.d, u, op, problem.P)
        assert rel(lb, problem.b) <= 1e-11 and rel(ld, problem.d) <= 1e-11

    def test_zero_fields(self, inst):
        truth, _, problem = inst
        op = HelmholtzOperator(truth, problem.omega)
        lb, ld = update_multipliers(problem.b, problem.d, problem.b, problem.d, np.zeros_like(problem.b),
                                    op, problem.P)
        np.testing.assert_array_equal(lb, 2 * problem.b)
        np.testing.assert_array_equal(ld, 2 * problem.d)


class TestValidateMap:
    def test_exact_field(self, inst):
        truth, _, problem = inst
        u = DenseHelmholtz(truth, problem.omega).solve_many(problem.b[:1])[0][0]
        m, mask = validate_model_from_wavefield(u, problem.b[0], problem.omega, truth.grid)
        assert mask.any()
        assert np.max(np.abs(m[mask] - truth.values[mask]) / truth.values[mask]) <= 1e-8
        assert np.all(np.isnan(m[~mask]))

    def test_scale_invariant(self, inst):
        truth, _, problem = inst
        u = DenseHelmholtz(truth, problem.omega).solve_many(problem.b[:1])[0][0]
        m1, k1 = validate_model_from_wavefield(u, problem.b[0], problem.omega, truth.grid)
        m2, k2 = validate_model_from_wavefield(2 * u, 2 * problem.b[0], problem.omega, truth.grid)
        np.testing.assert_array_equal(k1, k2)
        np.testing.assert_allclose(m1[k1], m2[k2], rtol=1e-13)

    def test_rejects_bad_floor(self, inst):
        truth, _, problem = inst
        with pytest.raises(ValueError):
            validate_model_from_wavefield(problem.b[0], problem.b[0], problem.omega, truth.grid, amp_floor=0)


class TestIterate:
    def test_true_model_is_fixed_point(self, inst):
        truth, _, problem = inst
        cfg = WriConfig(solver=CbsConfig(eta=1e-10))
        state, entry = wri_iterate(init_state(truth, problem), problem, cfg)
        assert rel(state.model.values, truth.values) <= 1e-6
        assert entry.forward_solves == 2 and entry.backward_solves == 5

    def test_data_residual_decreases(self):
        g = Grid2D(16, 16, 20.0, pad=6)
        v = np.full((16, 16), 1800.0)
        v[8:] = 2200.0
        truth = SquaredSlownessModel.from_velocity(g, v, (1 / 2600 ** 2, 1 / 1500 ** 2))
        start = truth.with_values(np.full((16, 16), 1 / 2000.0 ** 2))
        geo = AcquisitionGeometry([(40.0, 20.0), (160.0, 20.0), (260.0, 20.0)],
                                  [(20.0 + 36.0 * i, 280.0) for i in range(8)])
        P, b = geo.observation(g), geo.source_fields(g)
        omega = 2 * np.pi * 8.0
        d = P.sample(DenseHelmholtz(truth, omega).solve_many(b)[0]).T
        problem = WriProblem(8.0, P, b, d)
        state = init_state(start, problem)
        cfg = WriConfig(solver=CbsConfig(eta=ETA))
        residuals = []
        for _ in range(6):
            state, entry = wri_iterate(state, problem, cfg, truth=truth)
            residuals.append(entry.data_residual)
        assert residuals[5] < residuals[0]
        assert residuals[0] <= 0.05
        assert state.tally.forward == 18 and state.tally.backward == 48

    def test_matches_hand_stepped_dense_admm(self, inst):
        truth, start, problem = inst
        w = problem.omega
        cfg = WriConfig(lam0=2e-3, lam1=1.0, bounds=(1e-8, 1e-5))
        state = init_state(start, problem)
        lb, ld, m = problem.b.copy(), problem.d.copy(), start
        for _ in range(3):
            state, _ = wri_iterate(state, problem, cfg, make_operator=dense_factory())
            u = solve_augmented_normal(m, w, problem.P, 2e-3, 1.0, lb, ld)
            m, _ = update_model(m, u, lb, w, 2e-3, 0.0, cfg.bounds)
            A = assemble_helmholtz(m, w).entries
            lb = lb + problem.b - (A @ u.reshape(u.shape[0], -1).T).T.reshape(u.shape)
            ld = ld + problem.d - problem.P.sample(u).T
        assert rel(state.model.values, m.values) <= 1e-10
        assert rel(state.lambda_b, lb) <= 1e-10
        assert rel(state.lambda_d, ld) <= 1e-10


def _fd_gradient(f, x, h):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        grad[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


def test_objective_gradient_vanishes_at_update(inst):
    truth, start, problem = inst
    w, lam0 = problem.omega, 1.0
    u = DenseHelmholtz(truth, w).solve_many(problem.b)[0]
    energy = np.sum(np.abs(u[(slice(None),) + truth.grid.interior]) ** 2, axis=0)
    gamma = 1e-2 * lam0 * w ** 4 * energy.max()
    new, _ = update_model(start, u, problem.b, w, lam0, gamma, bounds=(1e-12, 1.0))
    assert new.values.min() > 1e-12  # projection inactive

    def f(mv):
        return model_objective(mv, start.values, u, problem.b, w, lam0, gamma, truth.grid)

    h = 1e-6 * np.abs(start.values).max()
    g_opt = _fd_gradient(f, new.values, h)
    g_prior = _fd_gradient(f, start.values, h)
    assert np.linalg.norm(g_prior) > 0
    assert np.linalg.norm(g_opt) / np.linalg.norm(g_prior) <= 1e-6
