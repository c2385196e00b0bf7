"""Spot-dependent default intensity, survival weights and calibration."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .errors import CalibrationError

__all__ = [
    "IntensityModel",
    "intensity",
    "survival_weights",
    "mean_survival",
    "calibrate_gamma0",
    "sample_gamma1_prior",
]

GAMMA0_MAX = 10.0
GAMMA0_MIN = 1e-12
CALIBRATION_TOL = 1e-3


@dataclass(frozen=True)
class IntensityModel:
    """Pre-default intensity gamma(S) = gamma0 (S0 / S)^gamma1.

    A positive ``gamma1`` raises the hazard when the spot falls, which
    produces wrong-way risk for portfolios that gain in that scenario.
    """

    gamma0: float = 0.02
    gamma1: float = 1.2
    S0: float = 100.0
    recovery: float = 0.4

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if not 0.0 <= self.recovery < 1.0:
            raise ValueError("recovery must lie in [0, 1)")
        if not self.S0 > 0:
            raise ValueError("reference spot must be positive")

    def with_gamma(self, gamma0=None, gamma1=None) -> "IntensityModel":
        return replace(self, gamma0=self.gamma0 if gamma0 is None else gamma0,
                       gamma1=self.gamma1 if gamma1 is None else gamma1)


def intensity(model: IntensityModel, S):
    """Evaluate gamma0 (S0 / S)^gamma1 elementwise."""
    S = np.asarray(S, dtype=float)
    if np.any(~(S > 0)):
        raise ValueError("intensity needs positive spot values")
    out = model.gamma0 * (model.S0 / S) ** model.gamma1
    return float(out) if out.ndim == 0 else out


def survival_weights(gamma, dt: float):
    """Survival factors and default densities on a uniform date grid.

    Parameters
    ----------
    gamma : array_like, shape (..., N)
        Intensity on the dates t_0..t_N, last axis is time.
    dt : float

    Returns
    -------
    survival : ndarray
        exp(-dt * sum_{l < i} gamma_l), so t_0 has survival 1.
    density : ndarray
        gamma_i * survival_i.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("intensities must be nonnegative")
    cum = np.cumsum(gamma, axis=-1) - gamma
    survival = np.exp(-dt * cum)
    return survival, gamma * survival


def mean_survival(gamma0: float, base, dt: float) -> float:
    """Mean over paths of exp(-gamma0 dt sum_i base_i).

    ``base`` holds (S0/S)^gamma1 on the left endpoints t_0..t_{N-1}.
    """
    return float(np.mean(np.exp(-gamma0 * dt * np.sum(base, axis=-1))))


def calibrate_gamma0(gamma1: float, spots, target: float, dt: float, S0: float = 100.0,
                     tol: float = CALIBRATION_TOL) -> float:
    """Solve for gamma0 so that the simulated survival matches ``target``.

    Parameters
    ----------
    gamma1 : float
    spots : array_like, shape (M, N)
        Simulated spot on the left endpoints t_0..t_{N-1} of the N date
        intervals, so that the integral of gamma is a left-endpoint sum.
    target : float
        Survival probability to t_N, in (0, 1).
    dt : float
        Date spacing.

    Raises
    ------
    CalibrationError
        When the target is not reachable for gamma0 in (0, 10] or the
        residual exceeds ``tol``.
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target survival must lie in (0, 1)")
    spots = np.asarray(spots, dtype=float)
    if np.any(~(spots > 0)):
        raise ValueError("spot values must be positive")
    base = (S0 / spots) ** gamma1

    def resid(g0):
        return mean_survival(g0, base, dt) - target

    lo, hi = GAMMA0_MIN, GAMMA0_MAX
    if resid(hi) > 0 or resid(lo) < 0:
        raise CalibrationError(f"survival target {target} unreachable for gamma0 in (0, {GAMMA0_MAX}]"
                               f" at gamma1={gamma1:.4g}")
    g0 = optimize.brentq(resid, lo, hi, xtol=1e-14, rtol=1e-12, maxiter=200)
    if abs(resid(g0)) > tol:
        raise CalibrationError(f"calibration residual {resid(g0):.3g} exceeds {tol}")
    return g0


def sample_gamma1_prior(center: float = 1.2, scale: float = 1.0, count: int = 1000, seed: int = 0):
    """Draws (center + scale Z)^2, a scaled noncentral chi-squared sample."""
    if count < 1:
        raise ValueError("count must be at least 1")
    z = np.random.default_rng(seed).standard_normal(count)
    return (center + scale * z) ** 2
