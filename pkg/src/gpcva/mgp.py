"""Multi-output GP with a separable covariance ``K' (x) Omega``.

The input kernel ``k' = k + delta_ij sigma^2`` is shared by all outputs and
the task covariance is parametrized as ``Omega = B B^T + omega^2 I`` with
``B`` of shape (d, rank).  The signal variance of a stationary input kernel
is pinned to one because it is not identifiable against ``Omega``.

Each output column is centred and divided by its range before fitting; the
reported task covariance is mapped back to original units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .errors import IllConditionedGramError
from .gp import LOG_2PI, _input_map, cholesky_jitter
from .kernels import KernelSpec, _as_2d, kernel_grad_hyper, kernel_matrix
from .optim import LOG_LOWER, LOG_UPPER, OptimizerCfg, minimize

__all__ = [
    "MgpModel",
    "task_covariance",
    "neg_log_marginal_multi",
    "fit_multi",
    "from_hyperparameters",
    "predict_multi",
    "portfolio_posterior",
]

B_BOUND = 1e2
FD_STEP = 1e-6


def task_covariance(b, omega: float) -> np.ndarray:
    """Omega = B B^T + omega^2 I for B of shape (d,) or (d, rank)."""
    B = np.asarray(b, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    return B @ B.T + omega**2 * np.eye(B.shape[0])


def _nll_parts(Kp: np.ndarray, Y: np.ndarray, Omega: np.ndarray):
    n, d = Y.shape
    L, _ = cholesky_jitter(Kp)
    Lo, _ = cholesky_jitter(Omega)
    A = linalg.cho_solve((L, True), Y, check_finite=False)
    logdet_k = 2.0 * np.sum(np.log(np.diag(L)))
    logdet_o = 2.0 * np.sum(np.log(np.diag(Lo)))
    quad = np.sum(linalg.cho_solve((Lo, True), np.eye(d), check_finite=False) * (Y.T @ A))
    value = 0.5 * n * d * LOG_2PI + 0.5 * d * logdet_k + 0.5 * n * logdet_o + 0.5 * quad
    return float(value), L, A, logdet_k


def neg_log_marginal_multi(X, Y, kernel: KernelSpec, noise: float, b, omega: float) -> float:
    """Negative log marginal likelihood of vec(Y) ~ N(0, K' (x) Omega)."""
    X = _as_2d(X)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ValueError("X and Y have different numbers of rows")
    Kp = kernel_matrix(kernel, X) + noise**2 * np.eye(X.shape[0])
    return _nll_parts(Kp, Y, task_covariance(b, omega))[0]


@dataclass(frozen=True)
class MgpModel:
    """Fitted multi-output GP; X and Y are stored in rescaled units."""

    kernel: KernelSpec
    noise: float
    B: np.ndarray
    omega: float
    X: np.ndarray
    Y: np.ndarray
    chol: np.ndarray
    A: np.ndarray
    x_lb: np.ndarray
    x_span: np.ndarray
    y_offset: np.ndarray
    y_scale: np.ndarray

    @property
    def d(self) -> int:
        return self.Y.shape[1]

    @property
    def omega_scaled(self) -> np.ndarray:
        return task_covariance(self.B, self.omega)

    @property
    def Omega(self) -> np.ndarray:
        """Task covariance in original output units."""
        D = np.diag(self.y_scale)
        return D @ self.omega_scaled @ D

    @property
    def x_ub(self) -> np.ndarray:
        return self.x_lb + self.x_span

    def scale_x(self, Xs) -> np.ndarray:
        Xs = _as_2d(Xs)
        if Xs.shape[1] != self.X.shape[1]:
            raise ValueError(f"expected {self.X.shape[1]} input columns, got {Xs.shape[1]}")
        return (Xs - self.x_lb) / self.x_span

    def to_dict(self) -> dict:
        return {
            "kind": "mgp",
            "kernel": self.kernel.to_dict(),
            "noise": self.noise,
            "b": self.B.tolist(),
            "omega": self.omega,
            "train_x": (self.x_lb + self.X * self.x_span).tolist(),
            "train_y": (self.y_offset + self.Y * self.y_scale).tolist(),
            "x_lb": self.x_lb.tolist(),
            "x_span": self.x_span.tolist(),
            "y_offset": self.y_offset.tolist(),
            "y_scale": self.y_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MgpModel":
        x_lb = np.asarray(data["x_lb"], dtype=float)
        return from_hyperparameters(
            np.asarray(data["train_x"], dtype=float),
            np.asarray(data["train_y"], dtype=float),
            KernelSpec.from_dict(data["kernel"]),
            float(data["noise"]),
            np.asarray(data["b"], dtype=float),
            float(data["omega"]),
            x_bounds=(x_lb, x_lb + np.asarray(data["x_span"], dtype=float)),
            y_offset=np.asarray(data["y_offset"], dtype=float),
            y_scale=np.asarray(data["y_scale"], dtype=float),
        )


def _output_maps(Y: np.ndarray, rescale: bool, y_offset=None, y_scale=None):
    offset = Y.mean(axis=0) if y_offset is None else np.asarray(y_offset, dtype=float)
    if y_scale is not None:
        scale = np.asarray(y_scale, dtype=float).copy()
    elif rescale:
        scale = Y.max(axis=0) - Y.min(axis=0)
    else:
        scale = np.ones(Y.shape[1])
    scale[~(scale > 0)] = 1.0
    return offset, scale


def _build(kernel, noise, B, omega, Xs, Ys, x_lb, x_span, offset, scale) -> MgpModel:
    Kp = kernel_matrix(kernel, Xs) + noise**2 * np.eye(Xs.shape[0])
    L, _ = cholesky_jitter(Kp)
    A = linalg.cho_solve((L, True), Ys, check_finite=False)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    return MgpModel(kernel, float(noise), B, float(omega), Xs, Ys, L, A, x_lb, x_span, offset, scale)


def from_hyperparameters(
    X, Y, kernel: KernelSpec, noise: float, b, omega: float, *, rescale: bool = True,
    x_bounds=None, y_offset=None, y_scale=None,
) -> MgpModel:
    """Condition a multi-output GP on (X, Y) with fixed hyperparameters."""
    X = _as_2d(X)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ValueError("X and Y have different numbers of rows")
    x_lb, x_span = _input_map(X, rescale, x_bounds)
    offset, scale = _output_maps(Y, rescale, y_offset, y_scale)
    return _build(kernel, noise, b, omega, (X - x_lb) / x_span, (Y - offset) / scale, x_lb, x_span, offset, scale)


def _free_mask(kernel: KernelSpec) -> np.ndarray:
    names = kernel.param_names()
    if kernel.stationary:
        return np.array([name != "variance" for name in names])
    return np.ones(len(names), dtype=bool)


def fit_multi(
    X, Y, kernel0: KernelSpec, opt: OptimizerCfg | None = None, *, noise0: float = 0.1,
    rank: int = 1, rescale: bool = True, x_bounds=None, train_kernel: bool = True,
) -> MgpModel:
    """Fit kernel hyperparameters, noise and task covariance jointly.

    Kernel and noise gradients are analytic; the task factor B and log omega
    are differentiated by central finite differences of the likelihood.
    With ``train_kernel=False`` the kernel and ``noise0`` are held fixed and
    only the task covariance is estimated.
    """
    opt = opt or OptimizerCfg()
    X = _as_2d(X)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 2:
        raise ValueError("fit_multi needs at least two output columns")
    n, d = Y.shape
    if n < 2 or X.shape[0] != n:
        raise ValueError("need at least two rows, matching between X and Y")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("training data must be finite")
    if kernel0.stationary:
        kernel0 = replace(kernel0, variance=1.0)
    x_lb, x_span = _input_map(X, rescale, x_bounds)
    offset, scale = _output_maps(Y, rescale)
    Xs, Ys = (X - x_lb) / x_span, (Y - offset) / scale

    mask = _free_mask(kernel0)
    base = kernel0.params()
    n_free = int(mask.sum())
    n_b = d * rank

    # start the task covariance at its conditional MLE given the initial kernel
    Kp0 = kernel_matrix(kernel0, Xs) + noise0**2 * np.eye(n)
    L0, _ = cholesky_jitter(Kp0)
    omega_hat = Ys.T @ linalg.cho_solve((L0, True), Ys) / n
    evals, evecs = np.linalg.eigh(omega_hat)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.maximum(evals[order], 1e-8), evecs[:, order]
    B0 = evecs[:, :rank] * np.sqrt(evals[:rank])
    rest = evals[rank:]
    omega0 = math.sqrt(max(float(rest.mean()) if rest.size else 0.1 * evals[0], 1e-6))

    z0 = np.concatenate([np.log(base[mask]), [math.log(max(noise0, 1e-6))], B0.ravel(), [math.log(omega0)]])
    lower = np.concatenate([np.full(n_free + 1, LOG_LOWER), np.full(n_b, -B_BOUND), [LOG_LOWER]])
    upper = np.concatenate([np.full(n_free + 1, LOG_UPPER), np.full(n_b, B_BOUND), [LOG_UPPER]])

    def unpack(z):
        theta = base.copy()
        theta[mask] = np.exp(z[:n_free])
        noise = math.exp(z[n_free])
        B = z[n_free + 1:n_free + 1 + n_b].reshape(d, rank)
        omega = math.exp(z[-1])
        return kernel0.with_params(theta), noise, B, omega

    def objective(z):
        kern, noise, B, omega = unpack(z)
        try:
            Kp = kernel_matrix(kern, Xs) + noise**2 * np.eye(n)
            value, L, A, logdet_k = _nll_parts(Kp, Ys, task_covariance(B, omega))
            Oinv = linalg.inv(task_covariance(B, omega))
            Kinv = linalg.cho_solve((L, True), np.eye(n), check_finite=False)
            W = d * Kinv - A @ Oinv @ A.T
            hyper = kernel_grad_hyper(kern, Xs).grads[mask]
            g_kern = 0.5 * np.einsum("ij,kji->k", W, hyper) * kern.params()[mask]
            g_noise = 0.5 * np.trace(W) * 2.0 * noise**2
            YA = Ys.T @ A
            const = 0.5 * d * logdet_k

            def task_nll(zt):
                Bt = zt[:n_b].reshape(d, rank)
                Om = task_covariance(Bt, math.exp(zt[-1]))
                sign, logdet_o = np.linalg.slogdet(Om)
                if sign <= 0:
                    return np.inf
                return 0.5 * n * logdet_o + 0.5 * np.sum(linalg.inv(Om) * YA) + const

            zt = z[n_free + 1:].copy()
            g_task = np.empty_like(zt)
            for i in range(zt.size):
                up, dn = zt.copy(), zt.copy()
                up[i] += FD_STEP
                dn[i] -= FD_STEP
                g_task[i] = (task_nll(up) - task_nll(dn)) / (2 * FD_STEP)
        except (IllConditionedGramError, linalg.LinAlgError, ValueError):
            return np.inf, np.zeros_like(z)
        grad = np.concatenate([g_kern, [g_noise], g_task])
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return np.inf, np.zeros_like(z)
        return value, grad

    if train_kernel:
        z, _ = minimize(objective, z0, opt, lower, upper)
    else:
        head = z0[:n_free + 1]

        def task_only(zt):
            value, grad = objective(np.concatenate([head, zt]))
            return value, grad[n_free + 1:]

        zt, _ = minimize(task_only, z0[n_free + 1:], opt, lower[n_free + 1:], upper[n_free + 1:])
        z = np.concatenate([head, zt])
    kern, noise, B, omega = unpack(z)
    return _build(kern, noise, B, omega, Xs, Ys, x_lb, x_span, offset, scale)


def predict_multi(model: MgpModel, Xs, full_cov: bool = True):
    """Return (M_hat, Sigma_hat, Omega); cov of vec(f*) is Sigma_hat (x) Omega.

    M_hat is m x d in original units.  Sigma_hat is the m x m input-side
    posterior covariance, or only its diagonal when ``full_cov`` is False.
    """
    Z = model.scale_x(Xs)
    Ks = kernel_matrix(model.kernel, Z, model.X)
    v = linalg.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    M = model.y_offset + (Ks @ model.A) * model.y_scale
    if full_cov:
        S = kernel_matrix(model.kernel, Z) - v.T @ v
        S = 0.5 * (S + S.T)
        idx = np.diag_indices_from(S)
        S[idx] = np.maximum(S[idx], 0.0)
    else:
        S = np.maximum(model.kernel.diag(Z) - np.einsum("ij,ij->j", v, v), 0.0)
    return M, S, model.Omega


def portfolio_posterior(model: MgpModel, w, Xs, full_cov: bool = True):
    """Mean and covariance of the portfolio value w^T f at test inputs.

    The covariance is ``(w^T Omega w) * Sigma_hat`` (full m x m matrix), or
    its diagonal when ``full_cov`` is False.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != model.d or not np.all(np.isfinite(w)):
        raise ValueError(f"weights must be a finite vector of length {model.d}")
    M, S, Omega = predict_multi(model, Xs, full_cov=full_cov)
    return M @ w, float(w @ Omega @ w) * S
