"""Exposure profiles and CVA estimators with exact or surrogate valuation.

A valuer maps a path set and a stored date index to portfolio values on
every path, plus the surrogate predictive variance when there is one.
Exact repricing (MC-reval) and per-date GP models (MC-GP) share the same
instrument descriptions, so the two estimators differ only in the values
they feed to identical aggregation code.

Exposures are computed once into an :class:`ExposureCube`; credit
quantities such as intensities and survival weights are applied afterwards,
which lets prior sweeps over credit parameters reuse the valuation work.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import gp as gpmod
from . import mgp as mgpmod
from .credit import IntensityModel, calibrate_gamma0, intensity, survival_weights
from .errors import CalibrationError, GridMismatchError
from .kernels import KernelSpec
from .optim import OptimizerCfg
from .paths import PathSet
from .pricers import SwapState, bs_price, irs_price

log = logging.getLogger(__name__)

__all__ = [
    "Instrument",
    "bs_option",
    "bs_portfolio",
    "swap_instrument",
    "time_key",
    "ExactValuer",
    "GpValuer",
    "MgpValuer",
    "fit_date_models",
    "fit_date_mgp_models",
    "ExposureCube",
    "exposure_cube",
    "discount_factors",
    "EpeProfile",
    "epe_profile",
    "CvaReport",
    "cva0_independent",
    "cva0_intensity",
    "cva0_from_cube",
    "NestedResult",
    "cva1_distribution",
    "cva1_from_cube",
    "cva_var",
    "UqResult",
    "uq_cva",
    "write_table",
]

Z95 = 1.959963984540054


def time_key(t: float) -> float:
    """Dictionary key for a model date, robust to grid round-off."""
    return round(float(t), 9)


# ---------------------------------------------------------------------------
# Instruments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Instrument:
    """One position: how to read its inputs from paths and how to price it.

    ``features(paths, i)`` returns an (M, p) array of model inputs at stored
    date ``i``.  ``price(t, X)`` returns values per row of ``X`` at time
    ``t`` in the reporting currency, per unit position.  After ``maturity``
    the value is zero.
    """

    name: str
    weight: float
    maturity: float
    features: Callable[[PathSet, int], np.ndarray]
    price: Callable[[float, np.ndarray], np.ndarray]

    def alive(self, t: float) -> bool:
        return t <= self.maturity + 1e-9


def _spot_feature(paths: PathSet, i: int) -> np.ndarray:
    return paths.factor("S")[:, i:i + 1]


def bs_option(name, side, strike, weight, T=2.0, r=0.0, sigma=0.3) -> Instrument:
    """Black-Scholes option on the path factor ``S`` expiring at ``T``."""

    def price(t, X):
        S = np.maximum(np.asarray(X, dtype=float)[:, 0], 1e-12)
        return bs_price(side, S, strike, r, max(T - t, 0.0), sigma)[0]

    return Instrument(name, float(weight), float(T), _spot_feature, price)


def bs_portfolio(T=2.0, r=0.0, sigma=0.3, positions=(("call", 110.0, 2.0), ("put", 90.0, -1.0))):
    """Option portfolio; the default holds two long 110 calls and a short 90 put."""
    return [bs_option(f"{side}{k:g}", side, k, w, T, r, sigma) for side, k, w in positions]


def _reset_index(paths: PathSet, swap: SwapState, i: int) -> int:
    """Stored index of the reset strictly before the date at index ``i``."""
    t = float(paths.grid[i])
    n, at_reset = swap.locate(min(t, swap.maturity))
    if at_reset:
        n -= 1
    n = max(n, 0)
    return paths.index_of(swap.schedule[n])


def swap_instrument(name, swap: SwapState, weight=1.0) -> Instrument:
    """Interest rate swap valued in domestic units.

    Inputs are the swap-currency short rate now, the same rate at the last
    reset strictly before now, and for a foreign swap the FX rate.
    """
    ccy = swap.currency

    def features(paths, i):
        r = paths.factor(f"r{ccy}")
        cols = [r[:, i], r[:, _reset_index(paths, swap, i)]]
        if ccy > 0:
            cols.append(paths.factor(f"fx{ccy}")[:, i])
        return np.column_stack(cols)

    def price(t, X):
        X = np.asarray(X, dtype=float)
        if t > swap.maturity + 1e-9:
            return np.zeros(X.shape[0])
        v = irs_price(swap, t, X[:, 0], X[:, 1]) * swap.notional
        if ccy > 0:
            v = v * X[:, 2]
        return np.broadcast_to(v, (X.shape[0],)).astype(float)

    return Instrument(name, float(weight), swap.maturity, features, price)


# ---------------------------------------------------------------------------
# Valuers
# ---------------------------------------------------------------------------

class ExactValuer:
    """Full repricing of every instrument on every path (MC-reval).

    With ``bounds=(lb, ub)`` the inputs are clamped to that box before
    pricing, so that exact and surrogate valuation see identical states.
    By default states are priced as simulated.
    """

    kind = "exact"

    def __init__(self, portfolio: Sequence[Instrument], bounds=None):
        self.portfolio = list(portfolio)
        self.bounds = bounds

    def value(self, paths: PathSet, i: int):
        t = float(paths.grid[i])
        total = np.zeros(paths.n_paths)
        for inst in self.portfolio:
            if inst.alive(t) and inst.weight != 0:
                X = inst.features(paths, i)
                if self.bounds is not None:
                    X = np.clip(X, self.bounds[0], self.bounds[1])
                total += inst.weight * inst.price(t, X)
        return total, None


def _clamp(model, X):
    return np.clip(X, model.x_lb, model.x_ub)


class GpValuer:
    """One single-output GP per instrument and date (MC-GP).

    ``models[name][time_key(t)]`` is the fitted model.  Inputs outside a
    model's training box are clamped to the box.  Portfolio variance sums
    the weighted instrument variances, treating the GPs as independent.
    With ``variance=False`` only posterior means are computed.
    """

    kind = "gp"

    def __init__(self, portfolio: Sequence[Instrument], models: dict, clamp: bool = True,
                 variance: bool = True):
        self.portfolio = list(portfolio)
        self.models = models
        self.clamp = clamp
        self.variance = variance

    def model_for(self, inst: Instrument, t: float):
        try:
            return self.models[inst.name][time_key(t)]
        except KeyError:
            raise GridMismatchError(f"no surrogate for {inst.name} at t={t:g}") from None

    def value(self, paths: PathSet, i: int):
        t = float(paths.grid[i])
        mean = np.zeros(paths.n_paths)
        var = np.zeros(paths.n_paths)
        for inst in self.portfolio:
            if not inst.alive(t) or inst.weight == 0:
                continue
            model = self.model_for(inst, t)
            X = inst.features(paths, i)
            if self.clamp:
                X = _clamp(model, X)
            if self.variance:
                mu, v = gpmod.predict(model, X)
                var += inst.weight**2 * v
            else:
                mu = gpmod.predict_mean(model, X)
            mean += inst.weight * mu
        return mean, (var if self.variance else None)


class MgpValuer:
    """One multi-output GP per date over instruments sharing inputs."""

    kind = "mgp"

    def __init__(self, portfolio: Sequence[Instrument], models: dict, clamp: bool = True):
        self.portfolio = list(portfolio)
        self.models = models
        self.clamp = clamp

    def value(self, paths: PathSet, i: int):
        t = float(paths.grid[i])
        try:
            model = self.models[time_key(t)]
        except KeyError:
            raise GridMismatchError(f"no multi-output surrogate at t={t:g}") from None
        w = np.array([inst.weight if inst.alive(t) else 0.0 for inst in self.portfolio])
        X = self.portfolio[0].features(paths, i)
        if self.clamp:
            X = _clamp(model, X)
        mean, var = mgpmod.portfolio_posterior(model, w, X, full_cov=False)
        return mean, var


def _fit_series(times, design, target, kernel0, noise0, opt, warm, **fit_kw):
    models = {}
    kernel, first = kernel0, True
    for t in times:
        X = design(t)
        Y = target(t, X)
        cfg = opt if (first or not warm) else OptimizerCfg(
            iterations=0, restarts=1, seed=opt.seed, polish=True)
        model = gpmod.fit(X, Y, kernel, noise0, cfg, **fit_kw)
        models[time_key(t)] = model
        if warm:
            kernel = model.kernel
        first = False
    return models


def fit_date_models(portfolio, times, design, kernel0: KernelSpec, *, noise0: float = 0.0,
                    opt: OptimizerCfg | None = None, warm_start: bool = True, x_bounds=None,
                    subsample: int | None = None, workers: int = 1) -> dict:
    """Fit one GP per instrument and date on exact prices.

    Parameters
    ----------
    portfolio : sequence of Instrument
    times : sequence of float
        Model dates.  Instruments get no model after maturity.
    design : callable
        ``design(inst, t)`` returns the (n, p) training inputs.
    warm_start : bool
        Start each date from the previous date's hyperparameters and only
        polish, instead of a full restart schedule.
    workers : int
        Instruments are fitted concurrently on this many threads; results
        do not depend on the thread count.
    """
    opt = opt or OptimizerCfg()

    def one(inst):
        ts = [t for t in times if inst.alive(t)]
        return _fit_series(ts, lambda t: design(inst, t), inst.price, kernel0, noise0, opt, warm_start,
                           x_bounds=x_bounds, subsample=subsample)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fitted = list(pool.map(one, portfolio))
    else:
        fitted = [one(inst) for inst in portfolio]
    return {inst.name: m for inst, m in zip(portfolio, fitted)}


def fit_date_mgp_models(portfolio, times, design, kernel0: KernelSpec, *, noise0: float = 0.1,
                        opt: OptimizerCfg | None = None, x_bounds=None) -> dict:
    """Fit one multi-output GP per date jointly over all instruments."""
    opt = opt or OptimizerCfg()
    out = {}
    for t in times:
        X = design(t)
        Y = np.column_stack([inst.price(t, X) if inst.alive(t) else np.zeros(X.shape[0])
                             for inst in portfolio])
        out[time_key(t)] = mgpmod.fit_multi(X, Y, kernel0, opt, noise0=noise0, x_bounds=x_bounds)
    return out


# ---------------------------------------------------------------------------
# Exposure cube and EPE
# ---------------------------------------------------------------------------

def discount_factors(paths: PathSet, r: float = 0.0) -> np.ndarray:
    """Discount factors beta on every path and stored date.

    Uses the stored domestic rate integral when present, else a flat rate
    ``r`` measured from the first grid date.
    """
    if "int_r0" in paths.names:
        return np.exp(-paths.factor("int_r0"))
    tau = paths.grid - paths.grid[0]
    return np.broadcast_to(np.exp(-r * tau), (paths.n_paths, paths.grid.size)).copy()


@dataclass(frozen=True)
class ExposureCube:
    """Portfolio values on exposure dates t_1..t_N of a path set.

    ``values`` and ``var`` have shape (M, N); ``discount`` holds beta on
    the same dates.  ``var`` is None for exact valuation.
    """

    grid: np.ndarray
    values: np.ndarray
    var: np.ndarray | None
    discount: np.ndarray
    kind: str

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def scaled(self, c: float) -> "ExposureCube":
        var = None if self.var is None else self.var * c**2
        return ExposureCube(self.grid, self.values * c, var, self.discount, self.kind)


def exposure_cube(valuer, paths: PathSet, discount=None, r: float = 0.0) -> ExposureCube:
    """Value the portfolio on every stored date after the first."""
    disc = discount_factors(paths, r) if discount is None else np.asarray(discount, dtype=float)
    if disc.shape != (paths.n_paths, paths.grid.size):
        raise GridMismatchError("discount factors do not match the path grid")
    vals, vars_ = [], []
    for i in range(1, paths.grid.size):
        v, s2 = valuer.value(paths, i)
        vals.append(v)
        vars_.append(s2)
    var = None if any(s is None for s in vars_) else np.column_stack(vars_)
    return ExposureCube(paths.grid.copy(), np.column_stack(vals), var, disc[:, 1:], valuer.kind)


@dataclass(frozen=True)
class EpeProfile:
    """Expected positive exposure per date with a surrogate uncertainty band."""

    times: np.ndarray
    epe: np.ndarray
    band: np.ndarray

    def rows(self):
        lo = np.maximum(self.epe - self.band, 0.0)
        hi = self.epe + self.band
        return [(t, e, a, b) for t, e, a, b in zip(self.times, self.epe, lo, hi)]


def epe_profile(cube: ExposureCube) -> EpeProfile:
    """EPE(t_i) = mean(beta pi+) with band mean(1{pi > 0} 1.96 sd beta)."""
    pos = np.maximum(cube.values, 0.0)
    epe = np.mean(cube.discount * pos, axis=0)
    if cube.var is None:
        band = np.zeros_like(epe)
    else:
        sd = np.sqrt(np.maximum(cube.var, 0.0))
        band = np.mean((cube.values > 0) * Z95 * sd * cube.discount, axis=0)
    return EpeProfile(cube.grid[1:].copy(), epe, band)


# ---------------------------------------------------------------------------
# CVA at time 0
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CvaReport:
    """CVA point estimate with Monte-Carlo and surrogate uncertainty."""

    cva: float
    std_error: float
    ci_lo: float
    ci_hi: float
    band_lo: float = float("nan")
    band_hi: float = float("nan")
    epe: EpeProfile | None = None
    per_path: np.ndarray | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def rows(self):
        return [
            ("cva", self.cva, self.ci_lo, self.ci_hi),
            ("std_error", self.std_error, float("nan"), float("nan")),
            ("gp_band", self.cva, self.band_lo, self.band_hi),
        ]


def _report(per_path, band_paths=None, epe=None, meta=None) -> CvaReport:
    M = per_path.size
    cva = float(np.mean(per_path))
    se = float(np.std(per_path, ddof=1) / np.sqrt(M)) if M > 1 else float("nan")
    lo = hi = float("nan")
    if band_paths is not None:
        lo, hi = (float(np.mean(b)) for b in band_paths)
    return CvaReport(cva, se, cva - Z95 * se, cva + Z95 * se, lo, hi, epe, per_path, dict(meta or {}))


def _bands(cube: ExposureCube):
    if cube.var is None:
        return None
    sd = np.sqrt(np.maximum(cube.var, 0.0))
    return (np.maximum(cube.values - Z95 * sd, 0.0), np.maximum(cube.values + Z95 * sd, 0.0))


def cva0_independent(cube: ExposureCube, dp, recovery: float = 0.4) -> CvaReport:
    """CVA with default independent of exposure.

    (1 - R) sum_i mean_j(beta pi+) dp_i, where ``dp[i]`` is the default
    probability over the interval ending at exposure date t_{i+1}.
    """
    dp = np.asarray(dp, dtype=float)
    if dp.shape != (cube.values.shape[1],):
        raise GridMismatchError("one default probability per exposure date is required")
    if np.any(dp < 0) or dp.sum() > 1 + 1e-12:
        raise ValueError("default probabilities must be nonnegative and sum to at most 1")
    lgd = 1.0 - recovery
    per_path = lgd * (cube.discount * np.maximum(cube.values, 0.0)) @ dp
    bands = _bands(cube)
    if bands is not None:
        bands = tuple(lgd * (cube.discount * b) @ dp for b in bands)
    return _report(per_path, bands, epe_profile(cube),
                   {"estimator": "independent", "valuer": cube.kind, "M": cube.n_paths})


def _intensity_weights(gamma_full, dt):
    # gamma_full on t_0..t_N; weights on t_1..t_N
    _, density = survival_weights(gamma_full, dt)
    return density[:, 1:]


def cva0_from_cube(cube: ExposureCube, gamma, recovery: float = 0.4) -> CvaReport:
    """Stochastic-intensity CVA from exposures and intensities on t_0..t_N.

    (1 - R) dt / M sum_j sum_i beta pi+ exp(-dt sum_{l<i} gamma_l) gamma_i.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (cube.n_paths, cube.grid.size):
        raise GridMismatchError("intensities must cover t_0..t_N on every path")
    dt = cube.dt
    w = (1.0 - recovery) * dt * _intensity_weights(gamma, dt) * cube.discount
    per_path = np.sum(w * np.maximum(cube.values, 0.0), axis=1)
    bands = _bands(cube)
    if bands is not None:
        bands = tuple(np.sum(w * b, axis=1) for b in bands)
    return _report(per_path, bands, epe_profile(cube),
                   {"estimator": "intensity", "valuer": cube.kind, "M": cube.n_paths,
                    "N": cube.values.shape[1]})


def cva0_intensity(valuer, paths: PathSet, model: IntensityModel, recovery: float | None = None,
                   discount=None, r: float = 0.0) -> CvaReport:
    """CVA at time 0 under the spot-dependent intensity ``model``."""
    cube = exposure_cube(valuer, paths, discount, r)
    R = model.recovery if recovery is None else recovery
    report = cva0_from_cube(cube, intensity(model, paths.factor("S")), R)
    report.meta.update({"gamma0": model.gamma0, "gamma1": model.gamma1, "seed": paths.seed})
    return report


# ---------------------------------------------------------------------------
# One-year CVA by nested simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NestedResult:
    """Outer sample of CVA(t1, S_t1) with its inner Monte-Carlo errors."""

    t1: float
    samples: np.ndarray
    inner_se: np.ndarray
    outer_states: np.ndarray


def cva1_from_cube(cube: ExposureCube, inner_spots, n_outer: int, model: IntensityModel,
                   recovery: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """CVA at the inner root date for each outer path.

    The inner cube has ``n_outer * n_inner`` rows ordered outer-major, and
    survival restarts at the root date (conditional on survival to it).
    """
    R = model.recovery if recovery is None else recovery
    gamma = intensity(model, inner_spots)
    per_path = cva0_from_cube(cube, gamma, R).per_path.reshape(n_outer, -1)
    n_inner = per_path.shape[1]
    se = per_path.std(axis=1, ddof=1) / np.sqrt(n_inner) if n_inner > 1 else np.zeros(n_outer)
    return per_path.mean(axis=1), se


def cva1_distribution(valuer, outer: PathSet, simulate_inner: Callable[[np.ndarray, int], PathSet],
                      n_inner: int, model: IntensityModel, recovery: float | None = None,
                      seed: int = 0, r: float = 0.0, t1: float | None = None) -> NestedResult:
    """Distribution of CVA(t1, S_t1) over outer paths.

    Parameters
    ----------
    valuer
        Valuer with models keyed by absolute date, so inner grids that
        start at ``t1`` align with time-0 models.
    outer : PathSet
        Outer paths; ``t1`` defaults to their last stored date.
    simulate_inner : callable
        ``simulate_inner(states, seed)`` restarts paths from the flattened
        outer states (each repeated ``n_inner`` times) and returns a
        PathSet whose grid starts at ``t1``.
    """
    t1 = float(outer.grid[-1]) if t1 is None else float(t1)
    S1 = outer.factor("S")[:, outer.index_of(t1)]
    inner = simulate_inner(np.repeat(S1, n_inner), seed)
    if abs(inner.grid[0] - t1) > 1e-9:
        raise GridMismatchError("inner paths must start at the outer horizon")
    cube = exposure_cube(valuer, inner, r=r)
    samples, se = cva1_from_cube(cube, inner.factor("S"), S1.size, model, recovery)
    return NestedResult(t1, samples, se, S1)


def cva_var(samples, alpha: float = 0.99) -> float:
    """Empirical alpha-quantile with linear interpolation between order statistics.

    For sorted x_0..x_{n-1} this is x at fractional rank alpha (n - 1).
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return float(np.quantile(x, alpha, method="linear"))


# ---------------------------------------------------------------------------
# Prior uncertainty quantification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UqResult:
    """CVA at time 0 per prior draw of gamma1 with calibrated gamma0."""

    gamma1: np.ndarray
    gamma0: np.ndarray
    cva: np.ndarray
    std_error: np.ndarray
    failures: int
    var: np.ndarray | None = None

    def quantiles(self, q=(0.025, 0.5, 0.975)) -> np.ndarray:
        ok = np.isfinite(self.cva)
        return np.quantile(self.cva[ok], q)


def uq_cva(gamma1_draws, target: float, cube: ExposureCube, spots, base: IntensityModel,
           nested: dict | None = None, alpha: float = 0.99) -> UqResult:
    """Propagate prior draws of gamma1 to the time-0 CVA.

    For each draw gamma0 is calibrated so that the simulated survival to
    the horizon equals ``target``; the exposure cube is reused across
    draws.  ``spots`` holds the spot on t_0..t_N for the same paths.

    Draws whose calibration fails are logged and left as NaN; a
    CalibrationError is raised when every draw fails.

    ``nested`` optionally supplies ``{"cube", "spots", "n_outer"}`` for the
    inner paths of a one-year nested run; the alpha-VaR of CVA_1 - CVA_0 is
    then added per draw.
    """
    g1 = np.asarray(gamma1_draws, dtype=float)
    spots = np.asarray(spots, dtype=float)
    g0 = np.full(g1.size, np.nan)
    cva = np.full(g1.size, np.nan)
    se = np.full(g1.size, np.nan)
    var = np.full(g1.size, np.nan) if nested else None
    failures = 0
    for k, gamma1 in enumerate(g1):
        try:
            gamma0 = calibrate_gamma0(gamma1, spots[:, :-1], target, cube.dt, base.S0)
        except CalibrationError as exc:
            log.warning("draw %d skipped: %s", k, exc)
            failures += 1
            continue
        model = base.with_gamma(gamma0, gamma1)
        rep = cva0_from_cube(cube, intensity(model, spots), model.recovery)
        g0[k], cva[k], se[k] = gamma0, rep.cva, rep.std_error
        if nested:
            c1, _ = cva1_from_cube(nested["cube"], nested["spots"], nested["n_outer"], model)
            var[k] = cva_var(c1 - rep.cva, alpha)
    if g1.size and failures == g1.size:
        raise CalibrationError(f"all {failures} prior draws failed calibration")
    return UqResult(g1, g0, cva, se, failures, var)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def write_table(path, header: Sequence[str], rows, delimiter: str = ",") -> Path:
    """Write a delimited table with a header row and fixed float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path
