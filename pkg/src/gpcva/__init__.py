"""Gaussian-process surrogates for derivative pricing and CVA.

Modules
-------
kernels   covariance functions and their gradients
gp        single-output GP regression (fit, predict, gradients, updates)
mgp       multi-output GP with a Kronecker task covariance
pricers   Black-Scholes, Heston (COS) and Hull-White swap pricers
paths     seeded path simulation (GBM, Heston, Hull-White with FX)
credit    spot-dependent intensity, survival weights, calibration
xva       exposure cubes, EPE, CVA at 0 and at a horizon, VaR, UQ
cli       ``gpcva run`` scenario front end
"""

from .errors import (
    CalibrationError,
    ConfigError,
    GpcvaError,
    GridMismatchError,
    IllConditionedGramError,
    InconsistentObservationError,
)

__version__ = "0.1.0"

__all__ = [
    "GpcvaError",
    "IllConditionedGramError",
    "InconsistentObservationError",
    "CalibrationError",
    "GridMismatchError",
    "ConfigError",
    "__version__",
]
