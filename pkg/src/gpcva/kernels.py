"""Covariance functions with hyperparameter and input-space gradients.

Kernels are described declaratively by :class:`KernelSpec`.  Stationary
families (squared exponential and Matern) are written in terms of the
scaled distance ``u = ||(x - x') / ell||`` so that their hyperparameter and
input gradients share one code path::

    k(x, x') = variance * g(u)

Closed forms are used for Matern with nu in {1/2, 3/2, 5/2}.  Other values
of nu are evaluated through the modified Bessel function of the second kind
and their hyperparameter gradients fall back to central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special
from scipy.spatial import distance

__all__ = [
    "KernelSpec",
    "HyperGradient",
    "InputGradient",
    "squared_exponential",
    "matern",
    "linear",
    "eval_kernel",
    "kernel_matrix",
    "kernel_grad_hyper",
    "kernel_grad_input",
    "grad_input_matrix",
]

FAMILIES = ("se", "matern", "linear", "sum", "product")
_CLOSED_FORM_NU = (0.5, 1.5, 2.5)
FD_REL_STEP = 1e-6


class HyperGradient(NamedTuple):
    """Stack of dK/dtheta, one n x n slice per free hyperparameter."""

    grads: np.ndarray
    names: tuple[str, ...]
    numeric: bool  # True when any slice came from finite differences


class InputGradient(NamedTuple):
    """Row i holds d k(x*, X_i) / d x*."""

    grad: np.ndarray
    degenerate: bool  # gradient undefined at a coincident point, zero returned


@dataclass(frozen=True)
class KernelSpec:
    """Declarative covariance function.

    Parameters
    ----------
    family : str
        One of ``"se"``, ``"matern"``, ``"linear"``, ``"sum"``, ``"product"``.
    lengthscale : float or tuple of float
        Shared lengthscale, or one per input dimension (ARD).  Ignored for
        linear and composite kernels.
    variance : float
        Signal variance for stationary kernels, slope scale for linear.
    nu : float
        Matern smoothness, fixed at construction.
    children : tuple of KernelSpec
        Operands of a sum or product.
    """

    family: str
    lengthscale: float | tuple[float, ...] = 1.0
    variance: float = 1.0
    nu: float = 2.5
    children: tuple["KernelSpec", ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family in ("sum", "product"):
            if len(self.children) < 2:
                raise ValueError(f"{self.family} kernel needs at least two children")
            return
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("lengthscale must be positive")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError("variance must be positive")
        if self.family == "matern" and not self.nu > 0:
            raise ValueError("nu must be positive")

    # ------------------------------------------------------------------
    # hyperparameter vector
    @property
    def stationary(self) -> bool:
        return self.family in ("se", "matern")

    @property
    def ard(self) -> bool:
        return self.stationary and np.ndim(self.lengthscale) > 0

    def param_names(self) -> tuple[str, ...]:
        if self.family in ("sum", "product"):
            names = []
            for i, child in enumerate(self.children):
                names.extend(f"{i}.{name}" for name in child.param_names())
            return tuple(names)
        if self.family == "linear":
            return ("variance",)
        if self.ard:
            ls = [f"lengthscale[{d}]" for d in range(len(self.lengthscale))]
        else:
            ls = ["lengthscale"]
        return tuple(ls) + ("variance",)

    def params(self) -> np.ndarray:
        """Free hyperparameters in natural (positive) units."""
        if self.family in ("sum", "product"):
            return np.concatenate([c.params() for c in self.children])
        if self.family == "linear":
            return np.array([self.variance], dtype=float)
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        return np.concatenate([ls, [self.variance]])

    def with_params(self, values: Sequence[float]) -> "KernelSpec":
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} hyperparameters, got {values.shape}")
        if self.family in ("sum", "product"):
            out, start = [], 0
            for child in self.children:
                stop = start + child.n_params
                out.append(child.with_params(values[start:stop]))
                start = stop
            return replace(self, children=tuple(out))
        if self.family == "linear":
            return replace(self, variance=float(values[0]))
        if self.ard:
            ls = tuple(float(v) for v in values[:-1])
        else:
            ls = float(values[0])
        return replace(self, lengthscale=ls, variance=float(values[-1]))

    @property
    def n_params(self) -> int:
        return len(self.param_names())

    def diag(self, X: np.ndarray) -> np.ndarray:
        """k(x, x) for every row of X."""
        X = _as_2d(X)
        if self.stationary:
            return np.full(X.shape[0], self.variance)
        if self.family == "linear":
            return self.variance * np.einsum("ij,ij->i", X, X)
        parts = [c.diag(X) for c in self.children]
        if self.family == "sum":
            return np.sum(parts, axis=0)
        return np.prod(parts, axis=0)

    # ------------------------------------------------------------------
    # serialization
    def to_dict(self) -> dict:
        if self.family in ("sum", "product"):
            return {"family": self.family, "children": [c.to_dict() for c in self.children]}
        if self.family == "linear":
            return {"family": "linear", "variance": self.variance}
        ls = list(self.lengthscale) if self.ard else self.lengthscale
        out = {"family": self.family, "lengthscale": ls, "variance": self.variance}
        if self.family == "matern":
            out["nu"] = self.nu
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        family = data["family"]
        if family in ("sum", "product"):
            return cls(family, children=tuple(cls.from_dict(c) for c in data["children"]))
        ls = data.get("lengthscale", 1.0)
        if isinstance(ls, (list, tuple)):
            ls = tuple(float(v) for v in ls)
        else:
            ls = float(ls)
        return cls(
            family,
            lengthscale=ls,
            variance=float(data.get("variance", 1.0)),
            nu=float(data.get("nu", 2.5)),
        )

    def __add__(self, other: "KernelSpec") -> "KernelSpec":
        return KernelSpec("sum", children=(self, other))

    def __mul__(self, other: "KernelSpec") -> "KernelSpec":
        return KernelSpec("product", children=(self, other))


def squared_exponential(lengthscale=1.0, variance=1.0) -> KernelSpec:
    return KernelSpec("se", lengthscale=lengthscale, variance=variance)


def matern(nu=2.5, lengthscale=1.0, variance=1.0) -> KernelSpec:
    return KernelSpec("matern", lengthscale=lengthscale, variance=variance, nu=nu)


def linear(variance=1.0) -> KernelSpec:
    return KernelSpec("linear", variance=variance)


# ----------------------------------------------------------------------
# radial profiles g(u) and g'(u)/u


def _profile(spec: KernelSpec, u: np.ndarray) -> np.ndarray:
    if spec.family == "se":
        return np.exp(-0.5 * u**2)
    nu = spec.nu
    if nu == 0.5:
        return np.exp(-u)
    if nu == 1.5:
        a = math.sqrt(3.0) * u
        return (1.0 + a) * np.exp(-a)
    if nu == 2.5:
        a = math.sqrt(5.0) * u
        return (1.0 + a + a**2 / 3.0) * np.exp(-a)
    return matern_bessel(u, nu)


def matern_bessel(u: np.ndarray, nu: float) -> np.ndarray:
    """Matern correlation for arbitrary nu via the Bessel function K_nu."""
    u = np.asarray(u, dtype=float)
    z = math.sqrt(2.0 * nu) * u
    out = np.ones_like(z)
    pos = z > 0
    zp = z[pos]
    # work in logs so large nu does not overflow gamma(nu)
    log_val = (1.0 - nu) * math.log(2.0) - special.gammaln(nu) + nu * np.log(zp)
    out[pos] = np.exp(log_val + np.log(special.kve(nu, zp)) - zp)
    return out


def _dprofile_over_u(spec: KernelSpec, u: np.ndarray) -> tuple[np.ndarray, bool]:
    """Return g'(u)/u and whether any entry is singular (u = 0, nu = 1/2)."""
    if spec.family == "se":
        return -np.exp(-0.5 * u**2), False
    nu = spec.nu
    if nu == 1.5:
        return -3.0 * np.exp(-math.sqrt(3.0) * u), False
    if nu == 2.5:
        a = math.sqrt(5.0) * u
        return -(5.0 / 3.0) * (1.0 + a) * np.exp(-a), False
    if nu == 0.5:
        zero = u <= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(zero, 0.0, -np.exp(-u) / np.where(zero, 1.0, u))
        return out, bool(np.any(zero))
    # generic nu: derivative of the Bessel form, d/du of the correlation
    h = 1e-6
    up = matern_bessel(u + h, nu)
    um = matern_bessel(np.maximum(u - h, 0.0), nu)
    du = (up - um) / (u + h - np.maximum(u - h, 0.0))
    zero = u <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(zero, 0.0, du / np.where(zero, 1.0, u))
    return out, bool(nu <= 0.5 and np.any(zero))


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError("inputs must be at most two dimensional")
    if not np.all(np.isfinite(X)):
        raise ValueError("kernel inputs must be finite")
    return X


def _check_dims(X: np.ndarray, X2: np.ndarray, spec: KernelSpec) -> None:
    if X.shape[1] != X2.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {X2.shape[1]}")
    _check_ard(spec, X.shape[1])


def _check_ard(spec: KernelSpec, p: int) -> None:
    if spec.ard and len(spec.lengthscale) != p:
        raise ValueError(f"ARD lengthscale has {len(spec.lengthscale)} entries for {p} inputs")
    for child in spec.children:
        _check_ard(child, p)


def _scaled_diff(spec: KernelSpec, X: np.ndarray, X2: np.ndarray):
    ls = np.atleast_1d(np.asarray(spec.lengthscale, dtype=float))
    diff = X[:, None, :] - X2[None, :, :]
    scaled = diff / ls
    u = np.sqrt(np.sum(scaled**2, axis=-1))
    return diff, u, ls


# ----------------------------------------------------------------------
# public operations


def eval_kernel(spec: KernelSpec, x, x2) -> float:
    """Covariance between two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.ndim != 1 or x2.ndim != 1:
        raise ValueError("eval_kernel expects single points")
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    return float(kernel_matrix(spec, x[None, :], x2[None, :])[0, 0])


def kernel_matrix(spec: KernelSpec, X, X2=None) -> np.ndarray:
    """Cross-covariance matrix with entry (i, j) = k(X_i, X2_j)."""
    X = _as_2d(X)
    X2 = X if X2 is None else _as_2d(X2)
    _check_dims(X, X2, spec)
    return _kmat(spec, X, X2)


def _kmat(spec: KernelSpec, X: np.ndarray, X2: np.ndarray) -> np.ndarray:
    if spec.stationary:
        ls = np.atleast_1d(np.asarray(spec.lengthscale, dtype=float))
        u = distance.cdist(X / ls, X2 / ls)
        return spec.variance * _profile(spec, u)
    if spec.family == "linear":
        return spec.variance * (X @ X2.T)
    mats = [_kmat(c, X, X2) for c in spec.children]
    if spec.family == "sum":
        return np.sum(mats, axis=0)
    return np.prod(mats, axis=0)


def kernel_grad_hyper(spec: KernelSpec, X) -> HyperGradient:
    """dK_{X,X}/dtheta for every free hyperparameter, in natural units."""
    X = _as_2d(X)
    _check_ard(spec, X.shape[1])
    grads, numeric = _grad_hyper(spec, X)
    return HyperGradient(grads, spec.param_names(), numeric)


def _grad_hyper(spec: KernelSpec, X: np.ndarray) -> tuple[np.ndarray, bool]:
    n = X.shape[0]
    if spec.family == "linear":
        return (X @ X.T)[None], False
    if spec.stationary:
        diff, u, ls = _scaled_diff(spec, X, X)
        g = _profile(spec, u)
        d_var = g[None]
        if spec.family == "matern" and spec.nu not in _CLOSED_FORM_NU:
            return _fd_grad_hyper(spec, X), True
        dg_u, _ = _dprofile_over_u(spec, u)
        # du/d ell_d = -diff_d^2 / (ell_d^3 u); g'(u) du/d ell_d = -(g'/u) diff_d^2 / ell_d^3
        if spec.ard:
            d_ls = -spec.variance * dg_u[None] * np.moveaxis(diff**2, -1, 0) / ls[:, None, None] ** 3
        else:
            d_ls = (-spec.variance * dg_u * u**2 / ls[0])[None]
        return np.concatenate([d_ls, d_var]), False
    mats = [_kmat(c, X, X) for c in spec.children]
    parts, numeric = [], False
    for i, child in enumerate(spec.children):
        g, num = _grad_hyper(child, X)
        numeric |= num
        if spec.family == "product":
            others = np.ones((n, n))
            for j, m in enumerate(mats):
                if j != i:
                    others = others * m
            g = g * others[None]
        parts.append(g)
    return np.concatenate(parts), numeric


def _fd_grad_hyper(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    theta = spec.params()
    out = []
    for i in range(theta.size):
        h = FD_REL_STEP * theta[i]
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        out.append((_kmat(spec.with_params(up), X, X) - _kmat(spec.with_params(dn), X, X)) / (2 * h))
    return np.stack(out)


def kernel_grad_input(spec: KernelSpec, x_star, X) -> InputGradient:
    """Gradient of k(x*, X_i) with respect to x*, one row per training point."""
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    X = _as_2d(X)
    if x_star.ndim != 1 or x_star.shape[0] != X.shape[1]:
        raise ValueError("dimension mismatch between x* and X")
    grad, degenerate = grad_input_matrix(spec, x_star[None, :], X)
    return InputGradient(grad[0], degenerate)


def grad_input_matrix(spec: KernelSpec, Xs, X) -> tuple[np.ndarray, bool]:
    """Vectorized input gradient, shape (m, n, p)."""
    Xs = _as_2d(Xs)
    X = _as_2d(X)
    _check_dims(Xs, X, spec)
    return _grad_input(spec, Xs, X)


def _grad_input(spec: KernelSpec, Xs: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, bool]:
    m, n = Xs.shape[0], X.shape[0]
    if spec.family == "linear":
        return spec.variance * np.broadcast_to(X[None, :, :], (m,) + X.shape).copy(), False
    if spec.stationary:
        diff, u, ls = _scaled_diff(spec, Xs, X)
        dg_u, degenerate = _dprofile_over_u(spec, u)
        # du/dx*_d = diff_d / (ell_d^2 u)
        return spec.variance * dg_u[..., None] * diff / ls**2, degenerate
    grads, degenerate = [], False
    for child in spec.children:
        g, deg = _grad_input(child, Xs, X)
        grads.append(g)
        degenerate |= deg
    if spec.family == "sum":
        return np.sum(grads, axis=0), degenerate
    mats = [_kmat(c, Xs, X) for c in spec.children]
    total = np.zeros((m, n, Xs.shape[1]))
    for i, g in enumerate(grads):
        others = np.ones((m, n))
        for j, k in enumerate(mats):
            if j != i:
                others = others * k
        total += g * others[..., None]
    return total, degenerate
