"""Seeded Monte-Carlo simulation of risk factors.

Each Brownian factor draws from its own child stream of
``SeedSequence(seed)``, one standard-normal vector over paths per time
step.  Factor ``j`` therefore sees the same numbers whether a model uses
one factor or twenty, which keeps single- and multi-factor runs on common
random numbers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .pricers import HestonParams, HullWhiteParams

__all__ = [
    "PathSet",
    "factor_streams",
    "psd_cholesky",
    "correlated_normals",
    "simulate_gbm",
    "simulate_heston",
    "RatesFxConfig",
    "block_correlation",
    "simulate_hw_fx",
    "measure_change_density",
]


@dataclass(frozen=True)
class PathSet:
    """Simulated trajectories on a stored time grid.

    Attributes
    ----------
    grid : ndarray, shape (N + 1,)
        Stored dates, strictly increasing.
    values : ndarray, shape (n_factors, M, N + 1)
    names : tuple of str
        Factor labels, one per leading slice of ``values``.
    seed : int
    meta : dict
        Scheme description (fine step count, storage stride, model).
    """

    grid: np.ndarray
    values: np.ndarray
    names: tuple
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] != len(self.names):
            raise ValueError("values must have shape (n_factors, M, N + 1)")
        if self.values.shape[2] != self.grid.size or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing and match values")

    @property
    def n_paths(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def factor(self, name: str) -> np.ndarray:
        """Array of shape (M, N + 1) for one factor."""
        try:
            return self.values[self.names.index(name)]
        except ValueError:
            raise KeyError(f"no factor {name!r}; available {self.names}") from None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.factor(name)

    def index_of(self, t: float) -> int:
        """Grid index of time t (must lie on the grid)."""
        i = int(np.argmin(np.abs(self.grid - t)))
        if abs(self.grid[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not on the stored grid")
        return i

    def to_csv(self, path, delimiter: str = ",") -> Path:
        """Write one row per (path, date) with one column per factor."""
        path = Path(path)
        M, n_t = self.n_paths, self.grid.size
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(["path", "date", "time", *self.names])
            for j in range(M):
                for i in range(n_t):
                    w.writerow([j, i, repr(float(self.grid[i]))] + [repr(float(v)) for v in self.values[:, j, i]])
        return path


def factor_streams(seed: int, k: int) -> list:
    """Independent generators, one per Brownian factor."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def psd_cholesky(R, jitter: float = 1e-12, max_jitter: float = 1e-6) -> np.ndarray:
    """Lower Cholesky factor of a correlation matrix with diagonal jitter."""
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or not np.allclose(R, R.T, atol=1e-12):
        raise ValueError("correlation matrix must be square and symmetric")
    eps = 0.0
    while True:
        try:
            return linalg.cholesky(R + eps * np.eye(R.shape[0]), lower=True)
        except linalg.LinAlgError:
            eps = jitter if eps == 0.0 else eps * 10
            if eps > max_jitter:
                raise ValueError("correlation matrix is not positive semidefinite") from None


def correlated_normals(R, count: int, seed: int) -> np.ndarray:
    """Draws of R^(1/2) Z with shape (count, k), via the Cholesky factor of R."""
    L = psd_cholesky(R)
    Z = np.stack([g.standard_normal(count) for g in factor_streams(seed, L.shape[0])])
    return (L @ Z).T


def _grid(T, steps, store_every, t0=0.0):
    if steps < 1 or store_every < 1 or steps % store_every:
        raise ValueError("steps must be a positive multiple of store_every")
    if T <= 0:
        raise ValueError("horizon must be positive")
    return t0 + T * np.arange(0, steps + 1, store_every) / steps, T / steps


def simulate_gbm(S0=100.0, r=0.0, sigma=0.3, T=2.0, steps=100, M=1000, seed=0,
                 store_every=1, t0=0.0) -> PathSet:
    """Geometric Brownian motion with exact log increments.

    ``S0`` may be an array of length M to restart paths from given states.
    The grid starts at ``t0``.
    """
    grid, dt = _grid(T, steps, store_every, t0)
    S0 = np.broadcast_to(np.asarray(S0, dtype=float), (M,))
    gen = factor_streams(seed, 1)[0]
    out = np.empty((1, M, grid.size))
    out[0, :, 0] = S0
    logS = np.log(S0).copy()
    drift, vol = (r - 0.5 * sigma**2) * dt, sigma * math.sqrt(dt)
    for n in range(1, steps + 1):
        logS += drift + vol * gen.standard_normal(M)
        if n % store_every == 0:
            out[0, :, n // store_every] = np.exp(logS)
    out[0, :, 0] = S0
    meta = {"model": "gbm", "steps": steps, "store_every": store_every, "r": r, "sigma": sigma}
    return PathSet(grid, out, ("S",), seed, meta)


def simulate_heston(params: HestonParams, steps=100, M=1000, seed=0, store_every=1, T=None) -> PathSet:
    """Heston paths by full-truncation Euler.

    The variance uses V+ in both drift and diffusion; the spot is stepped
    in logs.  Spot and variance shocks have correlation ``rho``.
    """
    p = params
    T = p.T if T is None else T
    grid, dt = _grid(T, steps, store_every)
    g1, g2 = factor_streams(seed, 2)
    sq = math.sqrt(dt)
    rho_c = math.sqrt(max(1.0 - p.rho**2, 0.0))
    logS = np.full(M, math.log(p.S0))
    V = np.full(M, float(p.V0))
    out = np.empty((2, M, grid.size))
    out[0, :, 0], out[1, :, 0] = p.S0, p.V0
    for n in range(1, steps + 1):
        z1 = g1.standard_normal(M)
        z2 = p.rho * z1 + rho_c * g2.standard_normal(M)
        Vp = np.maximum(V, 0.0)
        sv = np.sqrt(Vp) * sq
        logS += (p.r - 0.5 * Vp) * dt + sv * z1
        V = V + p.kappa * (p.theta - Vp) * dt + p.sigma * sv * z2
        if n % store_every == 0:
            out[0, :, n // store_every] = np.exp(logS)
            out[1, :, n // store_every] = V
    meta = {"model": "heston", "steps": steps, "store_every": store_every, "scheme": "full-truncation"}
    return PathSet(grid, out, ("S", "V"), seed, meta)


def block_correlation(n_rates: int, n_fx: int, rate_rate=0.45, rate_fx=0.30, fx_fx=0.15) -> np.ndarray:
    """Quasi-homogeneous correlation with rates first, then FX factors."""
    k = n_rates + n_fx
    R = np.empty((k, k))
    R[:n_rates, :n_rates] = rate_rate
    R[n_rates:, n_rates:] = fx_fx
    R[:n_rates, n_rates:] = rate_fx
    R[n_rates:, :n_rates] = rate_fx
    np.fill_diagonal(R, 1.0)
    return R


@dataclass(frozen=True)
class RatesFxConfig:
    """Multi-currency Hull-White rates with lognormal FX.

    Currency 0 is domestic.  ``fx0[k-1]`` and ``fx_vol[k-1]`` describe the
    price in domestic units of one unit of currency ``k``.  The correlation
    matrix orders factors as all short rates, then all FX rates.
    """

    hw: tuple = (HullWhiteParams(), HullWhiteParams())
    fx0: tuple = (1.0,)
    fx_vol: tuple = (0.1,)
    rate_rate: float = 0.45
    rate_fx: float = 0.30
    fx_fx: float = 0.15
    correlation: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.hw)
        if n < 1 or len(self.fx0) != n - 1 or len(self.fx_vol) != n - 1:
            raise ValueError("need one FX level and volatility per foreign currency")
        if any(v <= 0 for v in self.fx0) or any(v < 0 for v in self.fx_vol):
            raise ValueError("FX levels must be positive and volatilities nonnegative")
        R = self.R
        if not np.allclose(np.diag(R), 1.0) or not np.allclose(R, R.T):
            raise ValueError("correlation must be symmetric with unit diagonal")
        if np.linalg.eigvalsh(R).min() < -1e-10:
            raise ValueError("correlation matrix is not positive semidefinite")

    @property
    def n_currencies(self) -> int:
        return len(self.hw)

    @property
    def R(self) -> np.ndarray:
        if self.correlation is not None:
            return np.asarray(self.correlation, dtype=float)
        n = self.n_currencies
        return block_correlation(n, n - 1, self.rate_rate, self.rate_fx, self.fx_fx)

    def factor_names(self) -> tuple:
        n = self.n_currencies
        return (tuple(f"r{i}" for i in range(n)) + tuple(f"fx{k}" for k in range(1, n))
                + tuple(f"int_r{i}" for i in range(n)))


def simulate_hw_fx(config: RatesFxConfig, T: float, steps: int, M: int, seed: int = 0,
                   store_every: int = 10, scheme: str = "euler") -> PathSet:
    """Short rates and FX under the domestic pricing measure.

    Rates follow r_i = x_i + beta_i(t) with Ornstein-Uhlenbeck x_i.  Foreign
    factors carry the quanto drift -rho(x_k, fx_k) sigma_k sigma_fx_k.  FX is
    stepped in logs with drift r_0 - r_k.  The stored factors ``int_r{i}``
    hold the left-point integral of r_i on the fine grid.

    ``scheme`` is ``"euler"`` or ``"exact"`` (exact Gaussian transition of
    x_i over each fine step).
    """
    if scheme not in ("euler", "exact"):
        raise ValueError("scheme must be 'euler' or 'exact'")
    grid, dt = _grid(T, steps, store_every)
    n = config.n_currencies
    R = config.R
    L = psd_cholesky(R)
    gens = factor_streams(seed, R.shape[0])
    a = np.array([h.a for h in config.hw])
    sig = np.array([h.sigma for h in config.hw])
    fxv = np.asarray(config.fx_vol, dtype=float)
    quanto = np.zeros(n)
    for k in range(1, n):
        quanto[k] = -R[k, n + k - 1] * sig[k] * fxv[k - 1]

    if scheme == "exact":
        decay = np.exp(-a * dt)
        mean_drift = quanto * (1 - decay) / a
        vol_x = sig * np.sqrt((1 - decay**2) / (2 * a))
    else:
        decay = 1.0 - a * dt
        mean_drift = quanto * dt
        vol_x = sig * math.sqrt(dt)

    def beta(t):
        return np.array([h.beta(t) for h in config.hw])

    x = np.zeros((n, M))
    logfx = np.log(np.asarray(config.fx0, dtype=float))[:, None] * np.ones((1, M))
    integ = np.zeros((n, M))
    out = np.empty((3 * n - 1, M, grid.size))

    def store(col, t):
        r = x + beta(t)[:, None]
        out[:n, :, col] = r
        out[n:2 * n - 1, :, col] = np.exp(logfx)
        out[2 * n - 1:, :, col] = integ

    store(0, 0.0)
    sq = math.sqrt(dt)
    for step in range(1, steps + 1):
        t = (step - 1) * dt
        r = x + beta(t)[:, None]
        integ += r * dt
        Z = L @ np.stack([g.standard_normal(M) for g in gens])
        if n > 1:
            logfx += (r[0] - r[1:] - 0.5 * fxv[:, None] ** 2) * dt + fxv[:, None] * sq * Z[n:]
        x = decay[:, None] * x + mean_drift[:, None] + vol_x[:, None] * Z[:n]
        if step % store_every == 0:
            store(step // store_every, step * dt)
    meta = {"model": "hw_fx", "steps": steps, "store_every": store_every, "scheme": scheme,
            "fine_dt": dt}
    return PathSet(grid, out, config.factor_names(), seed, meta)


def measure_change_density(paths: PathSet, k: int) -> np.ndarray:
    """Radon-Nikodym density of the currency-k measure w.r.t. the domestic one.

    Evaluates FX_k(t)/FX_k(0) exp(int_0^t (r_k - r_0) ds) on every stored
    date; its mean over paths should be 1.
    """
    fx = paths.factor(f"fx{k}")
    return fx / fx[:, :1] * np.exp(paths.factor(f"int_r{k}") - paths.factor("int_r0"))
