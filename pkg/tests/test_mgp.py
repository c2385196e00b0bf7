"""Multi-output GP against dense Kronecker oracles and the single-output GP."""

import numpy as np
import pytest
from scipy import stats

from gpcva import gp, mgp
from gpcva.kernels import kernel_matrix, matern, squared_exponential
from gpcva.optim import OptimizerCfg

FAST = OptimizerCfg(iterations=150, restarts=1, seed=1)


def raw_model(X, Y, kernel, noise, b, omega):
    d = Y.shape[1]
    return mgp.from_hyperparameters(X, Y, kernel, noise, b, omega, rescale=False,
                                    y_offset=np.zeros(d), y_scale=np.ones(d))


@pytest.fixture
def problem(rng):
    X = np.sort(rng.uniform(0, 1, 5))[:, None]
    Y = np.column_stack([np.sin(4 * X[:, 0]), np.cos(3 * X[:, 0]), X[:, 0] ** 2]) + 0.01 * rng.standard_normal((5, 3))
    return X, Y, matern(2.5, 0.4), 0.3, np.array([0.8, -0.5, 0.3]), 0.4


class TestLikelihood:
    def test_scalar_case(self):
        got = mgp.neg_log_marginal_multi(np.zeros((1, 1)), np.zeros((1, 1)), squared_exponential(), 0.0, [0.0], 1.0)
        assert got == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-9)

    def test_dense_kronecker_oracle(self, problem):
        X, Y, k, noise, b, omega = problem
        C = np.kron(kernel_matrix(k, X) + noise**2 * np.eye(5), mgp.task_covariance(b, omega))
        oracle = -stats.multivariate_normal(np.zeros(15), C).logpdf(Y.ravel())
        assert mgp.neg_log_marginal_multi(X, Y, k, noise, b, omega) == pytest.approx(oracle, rel=1e-8)

    def test_column_permutation(self, problem):
        X, Y, k, noise, b, omega = problem
        perm = [2, 0, 1]
        a = mgp.neg_log_marginal_multi(X, Y, k, noise, b, omega)
        assert mgp.neg_log_marginal_multi(X, Y[:, perm], k, noise, b[perm], omega) == pytest.approx(a, rel=1e-12)


class TestPredict:
    def test_dense_vectorized_gp(self, problem):
        X, Y, k, noise, b, omega = problem
        m = raw_model(X, Y, k, noise, b, omega)
        Xs = np.linspace(-0.1, 1.1, 4)[:, None]
        Om = mgp.task_covariance(b, omega)
        C = np.kron(kernel_matrix(k, X) + noise**2 * np.eye(5), Om)
        Cs = np.kron(kernel_matrix(k, Xs, X), Om)
        Css = np.kron(kernel_matrix(k, Xs), Om)
        mean = Cs @ np.linalg.solve(C, Y.ravel())
        cov = Css - Cs @ np.linalg.solve(C, Cs.T)
        M, S, O = mgp.predict_multi(m, Xs)
        np.testing.assert_allclose(M.ravel(), mean, atol=1e-8)
        np.testing.assert_allclose(np.kron(S, O), cov, atol=1e-8)

    def test_interpolation(self, rng):
        X = np.linspace(0, 1, 8)[:, None]
        Y = np.column_stack([np.sin(3 * X[:, 0]), X[:, 0]])
        m = mgp.from_hyperparameters(X, Y, matern(2.5, 0.3), 0.0, [1.0, 0.5], 0.3)
        np.testing.assert_allclose(mgp.predict_multi(m, X)[0], Y, atol=1e-6)

    def test_reduces_to_single_output(self, rng):
        X = np.sort(rng.uniform(0, 1, 12))[:, None]
        Y = np.sin(5 * X[:, 0])[:, None]
        b, omega, noise, ls = np.array([0.9]), 0.5, 0.2, 0.3
        m = raw_model(X, Y, matern(2.5, ls), noise, b, omega)
        om = float(mgp.task_covariance(b, omega)[0, 0])
        single = gp.from_hyperparameters(X, Y[:, 0], matern(2.5, ls, om), noise * np.sqrt(om), rescale=False,
                                         y_offset=0.0, y_scale=1.0)
        Xs = np.linspace(0, 1.2, 9)[:, None]
        M, S, O = mgp.predict_multi(m, Xs, full_cov=False)
        mean, var = gp.predict(single, Xs)
        np.testing.assert_allclose(M[:, 0], mean, atol=1e-10)
        np.testing.assert_allclose(S * O[0, 0], var, atol=1e-10)

    def test_sigma_hat_symmetric_nonnegative(self, problem):
        X, Y, k, noise, b, omega = problem
        m = raw_model(X, Y, k, noise, b, omega)
        _, S, _ = mgp.predict_multi(m, np.linspace(0, 1, 15)[:, None])
        np.testing.assert_allclose(S, S.T, atol=1e-10)
        assert np.diag(S).min() >= 0

    def test_cholesky_invariant(self, problem):
        X, Y, k, noise, b, omega = problem
        m = raw_model(X, Y, k, noise, b, omega)
        Kp = kernel_matrix(k, m.X) + noise**2 * np.eye(5)
        np.testing.assert_allclose(m.chol @ m.chol.T, Kp, rtol=1e-10, atol=1e-10)


class TestPortfolio:
    def test_unit_weight_recovers_task(self, problem):
        X, Y, k, noise, b, omega = problem
        m = raw_model(X, Y, k, noise, b, omega)
        Xs = np.linspace(0, 1, 6)[:, None]
        M, S, O = mgp.predict_multi(m, Xs)
        mean, cov = mgp.portfolio_posterior(m, [0, 1, 0], Xs)
        np.testing.assert_allclose(mean, M[:, 1], atol=1e-12)
        np.testing.assert_allclose(cov, O[1, 1] * S, atol=1e-12)

    def test_perfectly_correlated_hedge(self):
        X = np.linspace(0, 1, 6)[:, None]
        Y = np.column_stack([X[:, 0], X[:, 0]])
        m = mgp.from_hyperparameters(X, Y, matern(2.5, 0.3), 0.01, [1.0, 1.0], 1e-6)
        _, cov = mgp.portfolio_posterior(m, [1, -1], np.linspace(0, 1, 11)[:, None], full_cov=False)
        assert np.max(cov) <= 1e-10

    def test_linear_in_weights(self, problem, rng):
        X, Y, k, noise, b, omega = problem
        m = raw_model(X, Y, k, noise, b, omega)
        Xs = np.linspace(0, 1, 6)[:, None]
        w1, w2 = rng.standard_normal(3), rng.standard_normal(3)
        lhs = mgp.portfolio_posterior(m, 2 * w1 - 3 * w2, Xs)[0]
        rhs = 2 * mgp.portfolio_posterior(m, w1, Xs)[0] - 3 * mgp.portfolio_posterior(m, w2, Xs)[0]
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_covariance_psd(self, problem, rng):
        X, Y, k, noise, b, omega = problem
        m = raw_model(X, Y, k, noise, b, omega)
        Xs = rng.uniform(-0.5, 1.5, (10, 1))
        for _ in range(5):
            _, cov = mgp.portfolio_posterior(m, rng.standard_normal(3), Xs)
            assert np.linalg.eigvalsh(cov).min() >= -1e-10

    def test_negative_cross_covariance_narrows_long_band(self):
        X = np.linspace(0, 1, 6)[:, None]
        Y = np.column_stack([X[:, 0], -X[:, 0]])
        m = mgp.from_hyperparameters(X, Y, matern(2.5, 0.3), 0.05, [1.0, -0.8], 0.3)
        assert m.Omega[0, 1] < 0
        Xs = np.linspace(0, 1, 9)[:, None]
        M, S, O = mgp.predict_multi(m, Xs, full_cov=False)
        _, joint = mgp.portfolio_posterior(m, [1, 1], Xs, full_cov=False)
        independent = (O[0, 0] + O[1, 1]) * S
        assert np.all(joint < independent)

    def test_rejects_bad_weights(self, problem):
        X, Y, k, noise, b, omega = problem
        m = raw_model(X, Y, k, noise, b, omega)
        with pytest.raises(ValueError):
            mgp.portfolio_posterior(m, [1, np.nan, 0], X)
        with pytest.raises(ValueError):
            mgp.portfolio_posterior(m, [1, 0], X)


class TestFit:
    def test_identical_columns_correlated(self):
        X = np.linspace(0, 1, 30)[:, None]
        y = np.sin(4 * X[:, 0])
        m = mgp.fit_multi(X, np.column_stack([y, y]), matern(2.5, 0.3), FAST, noise0=0.05)
        O = m.Omega
        assert O[0, 1] / np.sqrt(O[0, 0] * O[1, 1]) >= 0.9

    def test_independent_columns_uncorrelated(self):
        X = np.linspace(0, 1, 60)[:, None]
        Y = np.random.default_rng(5).standard_normal((60, 2))
        m = mgp.fit_multi(X, Y, matern(2.5, 0.3), FAST, noise0=0.5)
        O = m.Omega
        assert abs(O[0, 1]) <= 0.1 * np.sqrt(O[0, 0] * O[1, 1])

    def test_task_only_keeps_kernel(self):
        X = np.linspace(0, 1, 20)[:, None]
        Y = np.column_stack([X[:, 0], X[:, 0] ** 2])
        m = mgp.fit_multi(X, Y, matern(2.5, 0.25), FAST, noise0=0.1, train_kernel=False)
        assert m.kernel.lengthscale == pytest.approx(0.25, rel=1e-14)
        assert m.noise == pytest.approx(0.1, rel=1e-14)

    def test_fit_improves_likelihood(self):
        X = np.linspace(0, 1, 20)[:, None]
        Y = np.column_stack([np.sin(3 * X[:, 0]), np.cos(3 * X[:, 0])])
        k0 = matern(2.5, 0.05)
        m = mgp.fit_multi(X, Y, k0, FAST, noise0=0.3)
        start = mgp.neg_log_marginal_multi(m.X, m.Y, k0, 0.3, [0.1, 0.1], 1.0)
        end = mgp.neg_log_marginal_multi(m.X, m.Y, m.kernel, m.noise, m.B, m.omega)
        assert end < start

    def test_needs_two_tasks(self):
        with pytest.raises(ValueError):
            mgp.fit_multi(np.zeros((3, 1)), np.zeros((3, 1)), matern(2.5), FAST)


def test_serialization_round_trip(problem, tmp_path):
    X, Y, k, noise, b, omega = problem
    m = mgp.from_hyperparameters(X, Y, k, noise, b, omega)
    gp.save_model(m, tmp_path / "m.json")
    loaded = gp.load_model(tmp_path / "m.json")
    Xs = np.linspace(0, 1, 7)[:, None]
    for a, c in zip(mgp.predict_multi(m, Xs), mgp.predict_multi(loaded, Xs)):
        np.testing.assert_allclose(a, c, rtol=1e-10, atol=1e-14)
