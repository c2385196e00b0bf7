"""Single-output GP: evidence, fitting, prediction, gradients and online updates."""

import numpy as np
import pytest
from scipy import stats

from gpcva import gp
from gpcva.errors import IllConditionedGramError, InconsistentObservationError
from gpcva.kernels import kernel_matrix, linear, matern, squared_exponential
from gpcva.optim import OptimizerCfg
from gpcva.pricers import bs_price

FAST = OptimizerCfg(iterations=150, restarts=2, seed=3)


def dense_evidence(X, Y, kernel, noise):
    # brute-force multivariate normal log density, including the fixed
    # relative diagonal jitter that the factorization always adds
    C = kernel_matrix(kernel, X) + noise**2 * np.eye(len(Y))
    C += gp.JITTER * np.mean(np.diag(C)) * np.eye(len(Y))
    return stats.multivariate_normal(np.zeros(len(Y)), C).logpdf(Y)


def toy_data(rng, n=15):
    X = np.sort(rng.uniform(0, 1, n))[:, None]
    Y = np.sin(6 * X[:, 0]) + 0.05 * rng.standard_normal(n)
    return X, Y


class TestEvidence:
    def test_scalar_case(self):
        got = gp.log_evidence(np.zeros((1, 1)), [0.0], squared_exponential(), 0.0)
        assert got == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-9)

    def test_duplicate_rows_with_noise(self):
        X = np.array([[0.3], [0.3], [0.7]])
        assert np.isfinite(gp.log_evidence(X, [1.0, 1.1, 0.2], squared_exponential(0.5), 0.1))

    @pytest.mark.parametrize("kernel", [squared_exponential(0.3), matern(1.5, 0.2), linear(0.5) + squared_exponential(0.4)])
    def test_dense_oracle(self, kernel, rng):
        X, Y = toy_data(rng, 20)
        got = gp.log_evidence(X, Y, kernel, 0.1)
        assert got == pytest.approx(dense_evidence(X, Y, kernel, 0.1), rel=1e-8)

    @pytest.mark.parametrize("kernel", [squared_exponential(0.3, 1.4), matern(2.5, 0.2), linear(0.5) + matern(1.5, 0.4)])
    def test_gradient_finite_difference(self, kernel, rng):
        X, Y = toy_data(rng)
        noise = 0.2
        g = gp.evidence_grad(X, Y, kernel, noise)
        z = np.log(np.append(kernel.params(), noise))
        h = 1e-5
        for i in range(z.size):
            up, dn = z.copy(), z.copy()
            up[i] += h
            dn[i] -= h
            f = lambda w: gp.log_evidence(X, Y, kernel.with_params(np.exp(w[:-1])), np.exp(w[-1]))
            fd = (f(up) - f(dn)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_noise_component_negative_on_clean_data(self):
        X = np.linspace(0, 1, 10)[:, None]
        Y = np.sin(3 * X[:, 0])
        kernel = squared_exponential(0.3)
        assert gp.evidence_grad(X, Y, kernel, 1e-3)[-1] < 0
        assert gp.log_evidence(X, Y, kernel, 1e-2) < gp.log_evidence(X, Y, kernel, 1e-3)

    def test_factorization_failure(self):
        K = -np.eye(3)
        with pytest.raises(IllConditionedGramError):
            gp.cholesky_jitter(K)


class TestFit:
    def test_bs_call_in_sample(self):
        S = np.linspace(50, 150, 50)[:, None]
        price = bs_price("call", S[:, 0], 100.0, 0.01, 2.0, 0.3)[0]
        model = gp.fit(S, price, squared_exponential(0.3), 0.0, FAST)
        mean, _ = gp.predict(model, S)
        assert np.max(np.abs(mean - price)) <= 1e-3 * np.ptp(price)

    def test_constant_targets(self):
        X = np.linspace(0, 1, 8)[:, None]
        model = gp.fit(X, np.full(8, 3.5), squared_exponential(0.3), 0.0, FAST)
        mean, var = gp.predict(model, np.linspace(0, 1, 20)[:, None])
        np.testing.assert_allclose(mean, 3.5, atol=1e-10)
        _, var_train = gp.predict(model, X)
        assert var_train.max() <= 1e-8
        np.testing.assert_allclose(gp.predict_gradient(model, X), 0.0, atol=1e-10)

    def test_evidence_not_worse_than_start(self, rng):
        X, Y = toy_data(rng, 25)
        kernel0 = squared_exponential(0.05)
        model = gp.fit(X, Y, kernel0, 0.5, FAST)
        start = gp.from_hyperparameters(X, Y, kernel0, 0.5)
        assert model.log_evidence() >= start.log_evidence()

    def test_gradient_vanishes_at_optimum(self, rng):
        X, Y = toy_data(rng, 25)
        model = gp.fit(X, Y, squared_exponential(0.2), 0.1, OptimizerCfg(iterations=300, restarts=3))
        g = gp.evidence_grad(model.X, model.Y, model.kernel, model.noise)
        assert np.linalg.norm(g) <= 1e-4

    def test_non_finite_targets(self):
        with pytest.raises(ValueError):
            gp.fit(np.arange(3.0)[:, None], [0.0, np.nan, 1.0], squared_exponential(), 0.1)

    def test_subsample_conditions_on_all_rows(self, rng):
        X, Y = toy_data(rng, 40)
        model = gp.fit(X, Y, squared_exponential(0.2), 0.1, FAST, subsample=15)
        assert model.n == 40


class TestPredict:
    def test_interpolates_training_points(self):
        X = np.linspace(0, 2, 12)[:, None]
        Y = np.cos(2 * X[:, 0])
        model = gp.from_hyperparameters(X, Y, squared_exponential(0.4), 0.0)
        mean, var = gp.predict(model, X)
        np.testing.assert_allclose(mean, Y, atol=1e-6)
        assert var.max() <= 1e-8

    def test_single_point_hand_algebra(self):
        k = squared_exponential(0.7)
        model = gp.from_hyperparameters(np.array([[0.2]]), [1.5], k, 0.0, rescale=False, y_offset=0.0, y_scale=1.0)
        xs = np.array([[0.2], [0.5], [1.3]])
        kx = kernel_matrix(k, xs, np.array([[0.2]]))[:, 0]
        mean, var = gp.predict(model, xs)
        np.testing.assert_allclose(mean, 1.5 * kx, rtol=1e-9)
        np.testing.assert_allclose(var, 1 - kx**2, atol=1e-9)

    def test_extrapolation_variance_grows(self):
        X = np.linspace(0, 1, 15)[:, None]
        Y = 2 * X[:, 0] + np.sin(5 * X[:, 0])
        model = gp.fit(X, Y, linear() + squared_exponential(0.3), 0.01, FAST)
        _, var = gp.predict(model, np.linspace(1.1, 2.0, 10)[:, None])
        assert np.all(np.diff(var) > 0)

    def test_full_covariance_diagonal(self, rng):
        X, Y = toy_data(rng)
        model = gp.from_hyperparameters(X, Y, matern(2.5, 0.3), 0.05)
        xs = np.linspace(-0.1, 1.1, 9)[:, None]
        _, var = gp.predict(model, xs)
        _, cov = gp.predict(model, xs, full_cov=True)
        np.testing.assert_allclose(np.diag(cov), var, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(gp.predict_mean(model, xs), gp.predict(model, xs)[0], rtol=1e-12)

    def test_dimension_mismatch(self, rng):
        X, Y = toy_data(rng)
        model = gp.from_hyperparameters(X, Y, squared_exponential(0.3), 0.05)
        with pytest.raises(ValueError):
            gp.predict(model, np.zeros((2, 2)))

    def test_rescaling_invariance(self, rng):
        X = rng.uniform(0, 1, (12, 2))
        Y = np.sin(3 * X[:, 0]) * X[:, 1]
        xs = rng.uniform(0, 1, (7, 2))
        k = squared_exponential(0.6)
        raw = gp.from_hyperparameters(X, Y, k, 0.01, rescale=False, y_offset=0.0, y_scale=1.0)
        # rescaling inputs by a span with kernel lengthscale scaled alike is the same model
        a, b = np.array([2.0, -1.0]), np.array([5.0, 3.0])
        span = 1.0 / b
        scaled = gp.from_hyperparameters(a + X * b, Y, k, 0.01, x_bounds=(a, a + b), y_offset=0.0, y_scale=1.0)
        np.testing.assert_allclose(gp.predict(scaled, a + xs * b)[0], gp.predict(raw, xs)[0], atol=1e-8)
        np.testing.assert_allclose(gp.predict_gradient(scaled, a + xs * b) / span,
                                   gp.predict_gradient(raw, xs), atol=1e-8)

    def test_invariants(self, rng):
        X, Y = toy_data(rng)
        model = gp.from_hyperparameters(X, Y, matern(1.5, 0.3), 0.05)
        C = kernel_matrix(model.kernel, model.X) + (model.noise**2 + model.jitter) * np.eye(model.n)
        np.testing.assert_allclose(model.chol @ model.chol.T, C, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(C @ model.alpha, model.Y, rtol=1e-8, atol=1e-10)


class TestPredictGradient:
    def test_finite_difference(self, rng):
        X, Y = toy_data(rng)
        model = gp.from_hyperparameters(X, Y, matern(2.5, 0.3), 0.05)
        xs = np.linspace(0.05, 0.95, 11)[:, None]
        fd = (gp.predict(model, xs + 1e-6)[0] - gp.predict(model, xs - 1e-6)[0]) / 2e-6
        np.testing.assert_allclose(gp.predict_gradient(model, xs)[:, 0], fd, rtol=1e-5, atol=1e-6)

    def test_delta_tracks_closed_form(self):
        S = np.linspace(50, 150, 50)[:, None]
        model = gp.fit(S, bs_price("call", S[:, 0], 100.0, 0.0, 1.0, 0.3)[0], squared_exponential(0.3), 0.0, FAST)
        Ss = np.linspace(60, 140, 81)[:, None]
        delta = bs_price("call", Ss[:, 0], 100.0, 0.0, 1.0, 0.3)[1]
        assert np.max(np.abs(gp.predict_gradient(model, Ss)[:, 0] - delta)) <= 2e-2

    def test_degenerate_flag(self):
        X = np.linspace(0, 1, 5)[:, None]
        model = gp.from_hyperparameters(X, X[:, 0] ** 2, matern(0.5, 0.5), 0.0)
        _, flag = gp.predict_gradient(model, X[:1], return_flag=True)
        assert flag


class TestOnlineUpdate:
    def test_matches_rebuild(self, rng):
        X, Y = toy_data(rng, 29)
        k = matern(2.5, 0.25)
        model = gp.from_hyperparameters(X[:-1], Y[:-1], k, 0.05, x_bounds=(0.0, 1.0))
        updated = gp.online_update(model, X[-1], Y[-1])
        full = gp.from_hyperparameters(X, Y, k, 0.05, x_bounds=(0.0, 1.0), y_offset=model.y_offset,
                                       y_scale=model.y_scale)
        xs = np.linspace(0, 1, 40)[:, None]
        for a, b in zip(gp.predict(updated, xs), gp.predict(full, xs)):
            np.testing.assert_allclose(a, b, atol=1e-8)

    def test_returns_new_observation(self, rng):
        X, Y = toy_data(rng, 10)
        model = gp.from_hyperparameters(X, Y, matern(2.5, 0.1), 0.0)
        updated = gp.online_update(model, [0.555], 0.42)
        assert gp.predict(updated, [[0.555]])[0][0] == pytest.approx(0.42, abs=1e-6)

    def test_variance_nonincreasing(self, rng):
        X, Y = toy_data(rng, 10)
        model = gp.from_hyperparameters(X, Y, squared_exponential(0.2), 0.05)
        xs = np.linspace(0, 1, 50)[:, None]
        before = gp.predict(model, xs)[1]
        after = gp.predict(gp.online_update(model, [0.33], 0.1), xs)[1]
        assert np.all(after <= before + 1e-12)

    def test_known_point_no_change(self):
        X = np.linspace(0, 1, 6)[:, None]
        Y = X[:, 0] ** 2
        model = gp.from_hyperparameters(X, Y, squared_exponential(0.3), 0.0)
        updated = gp.online_update(model, X[2], Y[2])
        xs = np.linspace(0, 1, 25)[:, None]
        np.testing.assert_allclose(gp.predict(updated, xs)[0], gp.predict(model, xs)[0], atol=1e-8)

    def test_conflicting_duplicate(self):
        X = np.linspace(0, 1, 6)[:, None]
        model = gp.from_hyperparameters(X, X[:, 0] ** 2, squared_exponential(0.3), 0.0)
        with pytest.raises(InconsistentObservationError):
            gp.online_update(model, X[2], 5.0)


class TestSerialization:
    def test_round_trip(self, rng, tmp_path):
        X, Y = toy_data(rng)
        model = gp.from_hyperparameters(X, Y, linear(0.5) + matern(2.5, 0.3), 0.05)
        gp.save_model(model, tmp_path / "m.json")
        loaded = gp.load_model(tmp_path / "m.json")
        xs = np.linspace(0, 1, 13)[:, None]
        for a, b in zip(gp.predict(model, xs), gp.predict(loaded, xs)):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)
