"""Hyperparameter optimization: Adam with random restarts and an optional
bounded quasi-Newton polish of the best iterate."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import GpcvaError

log = logging.getLogger(__name__)

LOG_LOWER = np.log(1e-6)
LOG_UPPER = np.log(1e4)


@dataclass(frozen=True)
class OptimizerCfg:
    """Settings for evidence maximization.

    ``iterations`` Adam steps at rate ``learning_rate`` are run from the
    initial point and from ``restarts - 1`` log-normal perturbations of it.
    The best iterate seen is kept, then refined with L-BFGS-B when
    ``polish`` is set.
    """

    iterations: int = 300
    learning_rate: float = 0.1
    restarts: int = 5
    seed: int = 0
    polish: bool = True
    perturbation: float = 1.0

    def __post_init__(self):
        if self.iterations < 0 or self.restarts < 1 or self.learning_rate <= 0:
            raise ValueError("invalid optimizer configuration")


ObjectiveFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def _adam(fun: ObjectiveFn, z0, lr, iterations, lower, upper, beta1=0.9, beta2=0.999, eps=1e-8):
    z = np.clip(np.asarray(z0, dtype=float), lower, upper)
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    best_z, best_f = z.copy(), np.inf
    for t in range(1, iterations + 2):
        f, g = fun(z)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            break
        if f < best_f:
            best_z, best_f = z.copy(), f
        if t > iterations:
            break
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g**2
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        z = np.clip(z - lr * mhat / (np.sqrt(vhat) + eps), lower, upper)
    return best_z, best_f


def minimize(fun: ObjectiveFn, z0, cfg: OptimizerCfg, lower=LOG_LOWER, upper=LOG_UPPER):
    """Minimize ``fun`` (returning value and gradient) over a box in log space.

    Failed evaluations must return ``inf``; a restart stops at its first
    failure.  Raises when every restart fails at its starting point.
    """
    z0 = np.asarray(z0, dtype=float)
    lower = np.broadcast_to(lower, z0.shape).astype(float)
    upper = np.broadcast_to(upper, z0.shape).astype(float)
    rng = np.random.default_rng(cfg.seed)
    best_z, best_f = None, np.inf
    for r in range(cfg.restarts):
        start = z0 if r == 0 else z0 + cfg.perturbation * rng.standard_normal(z0.shape)
        z, f = _adam(fun, start, cfg.learning_rate, cfg.iterations, lower, upper)
        log.debug("restart %d: objective %.6g", r, f)
        if f < best_f:
            best_z, best_f = z, f
    if best_z is None:
        raise GpcvaError("every optimizer restart failed")
    if cfg.polish:
        def safe(z):
            f, g = fun(z)
            if not np.isfinite(f):
                return 1e300, np.zeros_like(z)
            return f, g

        res = optimize.minimize(
            safe, best_z, jac=True, method="L-BFGS-B",
            bounds=list(zip(lower, upper)), options={"maxiter": 500, "gtol": 1e-9, "ftol": 1e-15},
        )
        if np.isfinite(res.fun) and res.fun <= best_f:
            best_z, best_f = res.x, float(res.fun)
    return best_z, best_f
