"""Kernel values, Gram matrices and gradients against hand values and finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from gpcva.kernels import (
    KernelSpec,
    eval_kernel,
    kernel_grad_hyper,
    kernel_grad_input,
    kernel_matrix,
    linear,
    matern,
    squared_exponential,
)

ALL_SPECS = [
    squared_exponential(0.7, 1.3),
    matern(0.5, 0.9, 0.8),
    matern(1.5, 1.1),
    matern(2.5, 0.6, 2.0),
    matern(0.8, 1.2),
    squared_exponential((0.5, 1.5)),
    linear(0.7) + squared_exponential(0.8),
    matern(2.5, 0.9) * linear(1.2),
]


def matern_oracle(r, nu, ell):
    # textbook Bessel form, written independently of the package
    if r == 0:
        return 1.0
    z = np.sqrt(2 * nu) * r / ell
    return 2 ** (1 - nu) / special.gamma(nu) * z**nu * special.kv(nu, z)


class TestEvalKernel:
    def test_se_zero_distance(self):
        assert eval_kernel(squared_exponential(1.0), [0.3], [0.3]) == pytest.approx(1.0)

    def test_se_unit_distance(self):
        assert eval_kernel(squared_exponential(1.0), [0.0], [1.0]) == pytest.approx(np.exp(-0.5), rel=1e-12)

    def test_matern_half_is_exponential(self):
        assert eval_kernel(matern(0.5, 1.0), [0.0], [1.0]) == pytest.approx(np.exp(-1.0), rel=1e-12)

    @pytest.mark.parametrize("nu", [0.5, 1.5, 2.5, 0.8, 3.7])
    def test_matern_matches_bessel_oracle(self, nu):
        for r in (0.05, 0.4, 1.0, 2.5):
            got = eval_kernel(matern(nu, 0.9), [0.0], [r])
            assert got == pytest.approx(matern_oracle(r, nu, 0.9), rel=1e-9)

    def test_linear(self):
        assert eval_kernel(linear(2.0), [1.0, 2.0], [3.0, -1.0]) == pytest.approx(2.0)

    def test_signal_variance_scales(self):
        assert eval_kernel(squared_exponential(1.0, 3.0), [0.0], [1.0]) == pytest.approx(3 * np.exp(-0.5))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            eval_kernel(squared_exponential(), [0.0, 1.0], [1.0])

    def test_non_finite_input(self):
        with pytest.raises(ValueError):
            eval_kernel(squared_exponential(), [np.nan], [1.0])

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            squared_exponential(-1.0)
        with pytest.raises(ValueError):
            matern(0.0, 1.0)


class TestKernelMatrix:
    def test_single_point(self):
        K = kernel_matrix(squared_exponential(1.0, 2.5), np.array([[0.4]]))
        np.testing.assert_allclose(K, [[2.5]])

    def test_three_point_grid(self):
        K = kernel_matrix(squared_exponential(1.0), np.array([[0.0], [1.0], [2.0]]))
        a, b = np.exp(-0.5), np.exp(-2.0)
        np.testing.assert_allclose(K, [[1, a, b], [a, 1, a], [b, a, 1]], rtol=1e-12)

    def test_duplicate_rows(self):
        X = np.array([[0.1], [0.7], [0.1]])
        K = kernel_matrix(matern(2.5, 0.5), X)
        np.testing.assert_array_equal(K[0], K[2])

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family)
    def test_matches_eval_kernel(self, spec, rng):
        X = rng.uniform(-1, 1, (6, 2))
        X2 = rng.uniform(-1, 1, (4, 2))
        K = kernel_matrix(spec, X, X2)
        oracle = np.array([[eval_kernel(spec, a, b) for b in X2] for a in X])
        np.testing.assert_allclose(K, oracle, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family)
    def test_symmetric_psd(self, spec, rng):
        X = rng.uniform(-2, 2, (50, 2))
        K = kernel_matrix(spec, X)
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        scale = np.mean(np.diag(K))
        assert np.linalg.eigvalsh(K + 1e-10 * scale * np.eye(50)).min() >= -1e-9 * scale

    def test_matern_tends_to_se(self):
        X = np.linspace(0, 3, 30)[:, None]
        se = kernel_matrix(squared_exponential(0.8), X)
        gaps = [np.abs(kernel_matrix(matern(nu, 0.8), X) - se).max() for nu in (25.0, 100.0)]
        assert gaps[1] < gaps[0] < 0.05


class TestGradHyper:
    def test_se_zero_distance(self):
        g = kernel_grad_hyper(squared_exponential(1.0), np.array([[0.2]]))
        assert g.grads[0, 0, 0] == 0.0

    def test_se_unit_distance(self):
        g = kernel_grad_hyper(squared_exponential(1.0), np.array([[0.0], [1.0]]))
        assert g.names[0] == "lengthscale"
        assert g.grads[0, 0, 1] == pytest.approx(np.exp(-0.5), rel=1e-12)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family)
    def test_finite_difference(self, spec, rng):
        X = rng.uniform(-1, 1, (7, 2))
        g = kernel_grad_hyper(spec, X)
        theta = spec.params()
        for i in range(theta.size):
            h = 1e-5 * theta[i]
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            fd = (kernel_matrix(spec.with_params(up), X) - kernel_matrix(spec.with_params(dn), X)) / (2 * h)
            np.testing.assert_allclose(g.grads[i], fd, rtol=1e-5, atol=1e-9)

    def test_general_nu_flagged_numeric(self):
        assert kernel_grad_hyper(matern(0.8), np.zeros((2, 1))).numeric
        assert not kernel_grad_hyper(matern(2.5), np.zeros((2, 1))).numeric


class TestGradInput:
    def test_se_coincident_zero(self):
        g = kernel_grad_input(squared_exponential(1.0), [0.5], np.array([[0.5]]))
        np.testing.assert_allclose(g.grad, [[0.0]])

    def test_se_unit_offset(self):
        g = kernel_grad_input(squared_exponential(1.0), [0.0], np.array([[1.0]]))
        assert g.grad[0, 0] == pytest.approx(np.exp(-0.5), rel=1e-12)

    def test_linear(self):
        X = np.array([[1.0, 2.0], [-3.0, 0.5]])
        g = kernel_grad_input(linear(2.0), [0.3, 0.3], X)
        np.testing.assert_allclose(g.grad, 2.0 * X)

    def test_matern_half_coincident_flagged(self):
        g = kernel_grad_input(matern(0.5, 1.0), [0.2], np.array([[0.2], [0.9]]))
        assert g.degenerate
        assert g.grad[0, 0] == 0.0

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family)
    def test_finite_difference(self, spec, rng):
        X = rng.uniform(-1, 1, (5, 2))
        x = rng.uniform(-1, 1, 2)
        g = kernel_grad_input(spec, x, X).grad
        for d in range(2):
            e = np.zeros(2)
            e[d] = 1e-6
            fd = (kernel_matrix(spec, (x + e)[None], X) - kernel_matrix(spec, (x - e)[None], X))[0] / 2e-6
            np.testing.assert_allclose(g[:, d], fd, rtol=1e-5, atol=1e-9)


class TestSerialization:
    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family)
    def test_round_trip(self, spec):
        assert KernelSpec.from_dict(spec.to_dict()) == spec


@settings(max_examples=60, deadline=None)
@given(
    x=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    y=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    ell=st.floats(0.1, 5.0),
    nu=st.sampled_from([0.5, 1.5, 2.5]),
)
def test_symmetry_and_bounds(x, y, ell, nu):
    for spec in (squared_exponential(ell), matern(nu, ell)):
        a, b = eval_kernel(spec, x, y), eval_kernel(spec, y, x)
        assert a == b
        assert 0.0 <= a <= 1.0 + 1e-12
