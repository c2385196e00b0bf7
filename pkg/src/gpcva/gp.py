"""Single-output Gaussian process regression.

Training maximizes the log evidence over kernel hyperparameters and the
noise level in log space.  Fitted models keep the Cholesky factor of
``K + sigma^2 I`` and the weight vector ``alpha`` so that prediction,
Greeks by input differentiation and rank-one online updates are all
O(n^2) per test point.

Inputs are mapped affinely onto the unit box and targets are centred by
their mean and divided by their range before fitting.  Kernel
hyperparameters and the noise level of a :class:`GpModel` are expressed in
those rescaled units; predictions are always returned in original units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import IllConditionedGramError, InconsistentObservationError
from .kernels import KernelSpec, _as_2d, grad_input_matrix, kernel_grad_hyper, kernel_matrix
from .optim import OptimizerCfg, minimize

__all__ = [
    "GpModel",
    "OptimizerCfg",
    "cholesky_jitter",
    "log_evidence",
    "evidence_grad",
    "fit",
    "from_hyperparameters",
    "predict",
    "predict_mean",
    "predict_gradient",
    "online_update",
    "save_model",
    "load_model",
]

JITTER = 1e-10
MAX_JITTER = 1e-6
_CHUNK = 20000
LOG_2PI = math.log(2.0 * math.pi)


def cholesky_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K after adding relative diagonal jitter.

    Jitter starts at 1e-10 times the mean diagonal and grows tenfold up to
    1e-6 before giving up.
    """
    scale = float(np.mean(np.diag(K)))
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    jitter = JITTER
    while jitter <= MAX_JITTER * (1 + 1e-9):
        try:
            L = linalg.cholesky(K + jitter * scale * np.eye(K.shape[0]), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, jitter * scale
        except linalg.LinAlgError:
            pass
        jitter *= 10.0
    raise IllConditionedGramError(f"Gram matrix of size {K.shape[0]} is not positive definite")


def _prepare(X, Y, kernel, noise):
    X = _as_2d(X)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y have different numbers of rows")
    if X.shape[0] < 1:
        raise ValueError("need at least one observation")
    if not np.all(np.isfinite(Y)):
        raise ValueError("targets must be finite")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    K = kernel_matrix(kernel, X) + noise**2 * np.eye(X.shape[0])
    return X, Y, K


def log_evidence(X, Y, kernel: KernelSpec, noise: float) -> float:
    """log p(Y | X) = -1/2 Y^T (K + s^2 I)^{-1} Y - 1/2 log det(K + s^2 I) - n/2 log 2 pi."""
    X, Y, K = _prepare(X, Y, kernel, noise)
    L, _ = cholesky_jitter(K)
    a = linalg.solve_triangular(L, Y, lower=True, check_finite=False)
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * Y.size * LOG_2PI)


def _evidence_and_grad(X, Y, kernel: KernelSpec, noise: float, with_noise: bool = True):
    """Log evidence and its gradient in log-hyperparameter space."""
    K = kernel_matrix(kernel, X) + noise**2 * np.eye(X.shape[0])
    L, _ = cholesky_jitter(K)
    alpha = linalg.cho_solve((L, True), Y, check_finite=False)
    value = -0.5 * Y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * Y.size * LOG_2PI
    Kinv = linalg.cho_solve((L, True), np.eye(X.shape[0]), check_finite=False)
    W = np.outer(alpha, alpha) - Kinv
    hyper = kernel_grad_hyper(kernel, X)
    theta = kernel.params()
    # 1/2 tr(W dK/dtheta), chain-ruled through theta = exp(z)
    grad = 0.5 * np.einsum("ij,kji->k", W, hyper.grads) * theta
    if with_noise:
        grad = np.append(grad, 0.5 * np.trace(W) * 2.0 * noise**2)
    return float(value), grad


def evidence_grad(X, Y, kernel: KernelSpec, noise: float) -> np.ndarray:
    """Gradient of :func:`log_evidence` over (log kernel params..., log noise)."""
    X, Y, _ = _prepare(X, Y, kernel, noise)
    return _evidence_and_grad(X, Y, kernel, noise)[1]


# ----------------------------------------------------------------------


@dataclass(frozen=True)
class GpModel:
    """A fitted single-output GP.

    ``X`` and ``Y`` are the training data in rescaled units (unit box inputs,
    centred and range-scaled targets); ``x_lb``/``x_span`` and
    ``y_offset``/``y_scale`` record the affine maps.
    """

    kernel: KernelSpec
    noise: float
    X: np.ndarray
    Y: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    x_lb: np.ndarray
    x_span: np.ndarray
    y_offset: float
    y_scale: float
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def x_ub(self) -> np.ndarray:
        return self.x_lb + self.x_span

    @property
    def train_x(self) -> np.ndarray:
        return self.x_lb + self.X * self.x_span

    @property
    def train_y(self) -> np.ndarray:
        return self.y_offset + self.Y * self.y_scale

    def scale_x(self, Xs) -> np.ndarray:
        Xs = _as_2d(Xs)
        if Xs.shape[1] != self.X.shape[1]:
            raise ValueError(f"expected {self.X.shape[1]} input columns, got {Xs.shape[1]}")
        return (Xs - self.x_lb) / self.x_span

    def predict(self, Xs, full_cov: bool = False):
        return predict(self, Xs, full_cov=full_cov)

    def predict_gradient(self, Xs):
        return predict_gradient(self, Xs)

    def online_update(self, x_new, y_new):
        return online_update(self, x_new, y_new)

    def log_evidence(self) -> float:
        """Log evidence of the rescaled training data under this model."""
        a = linalg.solve_triangular(self.chol, self.Y, lower=True, check_finite=False)
        return float(-0.5 * a @ a - np.sum(np.log(np.diag(self.chol))) - 0.5 * self.n * LOG_2PI)

    def to_dict(self) -> dict:
        return {
            "kind": "gp",
            "kernel": self.kernel.to_dict(),
            "noise": self.noise,
            "train_x": self.train_x.tolist(),
            "train_y": self.train_y.tolist(),
            "x_lb": self.x_lb.tolist(),
            "x_span": self.x_span.tolist(),
            "y_offset": self.y_offset,
            "y_scale": self.y_scale,
            "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GpModel":
        x_lb = np.asarray(data["x_lb"], dtype=float)
        x_span = np.asarray(data["x_span"], dtype=float)
        return from_hyperparameters(
            np.asarray(data["train_x"], dtype=float),
            np.asarray(data["train_y"], dtype=float),
            KernelSpec.from_dict(data["kernel"]),
            float(data["noise"]),
            x_bounds=(x_lb, x_lb + x_span),
            y_offset=float(data["y_offset"]),
            y_scale=float(data["y_scale"]),
        )


def _input_map(X: np.ndarray, rescale: bool, x_bounds):
    p = X.shape[1]
    if x_bounds is not None:
        lb = np.broadcast_to(np.asarray(x_bounds[0], dtype=float), (p,)).copy()
        ub = np.broadcast_to(np.asarray(x_bounds[1], dtype=float), (p,)).copy()
    elif rescale:
        lb, ub = X.min(axis=0), X.max(axis=0)
    else:
        return np.zeros(p), np.ones(p)
    span = ub - lb
    span[span <= 0] = 1.0
    return lb, span


def _output_map(Y: np.ndarray, rescale: bool, y_offset, y_scale):
    offset = float(np.mean(Y)) if y_offset is None else float(y_offset)
    if y_scale is not None:
        scale = float(y_scale)
    elif rescale:
        scale = float(np.max(Y) - np.min(Y))
    else:
        scale = 1.0
    if not scale > 0:
        scale = 1.0
    return offset, scale


def _build(kernel, noise, Xs, Ys, x_lb, x_span, y_offset, y_scale) -> GpModel:
    K = kernel_matrix(kernel, Xs) + noise**2 * np.eye(Xs.shape[0])
    L, jitter = cholesky_jitter(K)
    alpha = linalg.cho_solve((L, True), Ys, check_finite=False)
    return GpModel(kernel, float(noise), Xs, Ys, L, alpha, x_lb, x_span, y_offset, y_scale, jitter)


def from_hyperparameters(
    X, Y, kernel: KernelSpec, noise: float, *, rescale: bool = True,
    x_bounds=None, y_offset=None, y_scale=None,
) -> GpModel:
    """Condition a GP on (X, Y) with fixed hyperparameters (no optimization).

    ``x_bounds``, ``y_offset`` and ``y_scale`` override the affine maps that
    would otherwise be derived from the data.
    """
    X = _as_2d(X)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y have different numbers of rows")
    if not np.all(np.isfinite(Y)):
        raise ValueError("targets must be finite")
    x_lb, x_span = _input_map(X, rescale, x_bounds)
    offset, scale = _output_map(Y, rescale, y_offset, y_scale)
    return _build(kernel, noise, (X - x_lb) / x_span, (Y - offset) / scale, x_lb, x_span, offset, scale)


def fit(
    X, Y, kernel0: KernelSpec, noise0: float = 0.1, opt: OptimizerCfg | None = None, *,
    rescale: bool = True, x_bounds=None, train_noise: bool | None = None, subsample: int | None = None,
) -> GpModel:
    """Fit hyperparameters by maximizing the evidence, return the best model.

    ``noise0 = 0`` keeps the noise fixed at zero (jitter only) unless
    ``train_noise`` is forced.  With ``subsample`` set, hyperparameters are
    learned on a seeded random subset of that many rows and the returned
    model is then conditioned on all rows.
    """
    opt = opt or OptimizerCfg()
    X = _as_2d(X)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y have different numbers of rows")
    if not np.all(np.isfinite(Y)) or not np.all(np.isfinite(X)):
        raise ValueError("training data must be finite")
    if np.unique(X, axis=0).shape[0] < 2:
        raise ValueError("need at least two distinct training inputs")
    train_noise = (noise0 > 0) if train_noise is None else train_noise
    x_lb, x_span = _input_map(X, rescale, x_bounds)
    offset, scale = _output_map(Y, rescale, None, None)
    Xs, Ys = (X - x_lb) / x_span, (Y - offset) / scale

    Xo, Yo = Xs, Ys
    if subsample is not None and subsample < X.shape[0]:
        idx = np.sort(np.random.default_rng(opt.seed).choice(X.shape[0], subsample, replace=False))
        Xo, Yo = Xs[idx], Ys[idx]

    n_k = kernel0.n_params
    z0 = np.log(kernel0.params())
    if train_noise:
        z0 = np.append(z0, math.log(max(noise0, 1e-6)))

    def objective(z):
        kern = kernel0.with_params(np.exp(z[:n_k]))
        noise = math.exp(z[n_k]) if train_noise else noise0
        try:
            value, grad = _evidence_and_grad(Xo, Yo, kern, noise, with_noise=train_noise)
        except (IllConditionedGramError, FloatingPointError, ValueError):
            return np.inf, np.zeros_like(z)
        return -value, -grad

    z, _ = minimize(objective, z0, opt)
    kernel = kernel0.with_params(np.exp(z[:n_k]))
    noise = math.exp(z[n_k]) if train_noise else noise0
    return _build(kernel, noise, Xs, Ys, x_lb, x_span, offset, scale)


# ----------------------------------------------------------------------


def predict(model: GpModel, Xs, full_cov: bool = False):
    """Posterior mean and variance (or covariance) of f at test inputs."""
    Z = model.scale_x(Xs)
    if full_cov:
        Ks = kernel_matrix(model.kernel, Z, model.X)
        v = linalg.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
        cov = kernel_matrix(model.kernel, Z) - v.T @ v
        mean = model.y_offset + model.y_scale * (Ks @ model.alpha)
        return mean, model.y_scale**2 * cov
    means, variances = [], []
    for start in range(0, Z.shape[0], _CHUNK):
        Zc = Z[start:start + _CHUNK]
        Ks = kernel_matrix(model.kernel, Zc, model.X)
        v = linalg.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
        means.append(Ks @ model.alpha)
        variances.append(np.maximum(model.kernel.diag(Zc) - np.einsum("ij,ij->j", v, v), 0.0))
    mean = model.y_offset + model.y_scale * np.concatenate(means)
    return mean, model.y_scale**2 * np.concatenate(variances)


def predict_mean(model: GpModel, Xs) -> np.ndarray:
    """Posterior mean only, skipping the variance solves."""
    Z = model.scale_x(Xs)
    out = [kernel_matrix(model.kernel, Z[s:s + _CHUNK], model.X) @ model.alpha
           for s in range(0, Z.shape[0], _CHUNK)]
    return model.y_offset + model.y_scale * np.concatenate(out)


def predict_gradient(model: GpModel, Xs, return_flag: bool = False):
    """Gradient of the posterior mean with respect to the (original) inputs."""
    Z = model.scale_x(Xs)
    out, degenerate = [], False
    for start in range(0, Z.shape[0], _CHUNK // 4):
        g, deg = grad_input_matrix(model.kernel, Z[start:start + _CHUNK // 4], model.X)
        out.append(np.einsum("mnp,n->mp", g, model.alpha))
        degenerate |= deg
    grad = np.concatenate(out) * model.y_scale / model.x_span
    return (grad, degenerate) if return_flag else grad


def online_update(model: GpModel, x_new, y_new: float, atol: float = 1e-8) -> GpModel:
    """Condition on one more observation by extending the Cholesky factor.

    Hyperparameters and the rescaling maps are left unchanged.  An
    observation that carries no new information (zero posterior variance and
    matching mean) returns the model unchanged; one that contradicts a
    noise-free interpolant raises :class:`InconsistentObservationError`.
    """
    x_new = np.atleast_1d(np.asarray(x_new, dtype=float)).reshape(1, -1)
    z = model.scale_x(x_new)
    y = (float(y_new) - model.y_offset) / model.y_scale
    k = kernel_matrix(model.kernel, model.X, z)[:, 0]
    c = model.kernel.diag(z)[0] + model.noise**2 + model.jitter
    l = linalg.solve_triangular(model.chol, k, lower=True, check_finite=False)
    d2 = c - l @ l
    if d2 <= max(model.jitter, 1e-12 * c) * 10:
        mean = k @ model.alpha
        if abs(mean - y) * model.y_scale > atol * max(1.0, abs(float(y_new))):
            raise InconsistentObservationError(
                f"observation {y_new} at {x_new.ravel()} contradicts interpolated value "
                f"{model.y_offset + model.y_scale * mean}"
            )
        return model
    n = model.n
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = model.chol
    L[n, :n] = l
    L[n, n] = math.sqrt(d2)
    X = np.vstack([model.X, z])
    Y = np.append(model.Y, y)
    alpha = linalg.cho_solve((L, True), Y, check_finite=False)
    return replace(model, X=X, Y=Y, chol=L, alpha=alpha)


def save_model(model, path) -> None:
    """Write a GP or multi-output GP model as JSON."""
    Path(path).write_text(json.dumps(model.to_dict(), indent=1))


def load_model(path):
    data = json.loads(Path(path).read_text())
    if data.get("kind") == "mgp":
        from .mgp import MgpModel

        return MgpModel.from_dict(data)
    return GpModel.from_dict(data)
