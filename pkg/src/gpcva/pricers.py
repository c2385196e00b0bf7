"""Reference pricers used to generate training data and exact revaluation.

* Black-Scholes prices with delta and vega.
* Heston European options by the Fourier-cosine expansion of the density.
* Hull-White zero-coupon bonds, simple rates and spot-starting swap values.

All functions broadcast over numpy arrays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

log = logging.getLogger(__name__)

__all__ = [
    "bs_price",
    "HestonParams",
    "heston_cf",
    "heston_cumulants",
    "heston_price_cos",
    "HullWhiteParams",
    "hw_zero_bond",
    "simple_rate",
    "SwapState",
    "irs_price",
    "par_rate",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _side_sign(side) -> int:
    if side in ("call", 1, "c", "C"):
        return 1
    if side in ("put", -1, "p", "P"):
        return -1
    raise ValueError(f"unknown option side {side!r}")


# ---------------------------------------------------------------------------
# Black-Scholes
# ---------------------------------------------------------------------------

def bs_price(side, S, K, r, T, sigma):
    """Black-Scholes price, delta and vega of a European option.

    Parameters
    ----------
    side : {"call", "put"}
    S, K, r, T, sigma : array_like
        Spot, strike, continuously compounded rate, time to maturity and
        implied volatility.  Broadcast against each other.

    Returns
    -------
    price, delta, vega : ndarray
        At ``T == 0`` the intrinsic value is returned with a step delta and
        zero vega.
    """
    phi = _side_sign(side)
    S, K, r, T, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (S, K, r, T, sigma)))
    if np.any(S <= 0) or np.any(K <= 0) or np.any(sigma <= 0) or np.any(T < 0):
        raise ValueError("bs_price needs S, K, sigma > 0 and T >= 0")
    live = T > 0
    Tl = np.where(live, T, 1.0)
    sd = sigma * np.sqrt(Tl)
    d1 = (np.log(S / K) + (r + 0.5 * sigma**2) * Tl) / sd
    d2 = d1 - sd
    df = np.exp(-r * Tl)
    price = phi * (S * ndtr(phi * d1) - K * df * ndtr(phi * d2))
    delta = phi * ndtr(phi * d1)
    vega = S * np.exp(-0.5 * d1**2) / _SQRT_2PI * np.sqrt(Tl)

    intrinsic = np.maximum(phi * (S - K), 0.0)
    step = np.where(phi * (S - K) > 0, float(phi), 0.0)
    price = np.where(live, price, intrinsic)
    delta = np.where(live, delta, step)
    vega = np.where(live, vega, 0.0)
    if price.ndim == 0:
        return float(price), float(delta), float(vega)
    return price, delta, vega


# ---------------------------------------------------------------------------
# Heston
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HestonParams:
    """Heston model and contract terms.

    ``sigma`` is the volatility of variance and ``rho`` the spot/variance
    correlation.
    """

    S0: float = 100.0
    V0: float = 0.1
    kappa: float = 0.1
    theta: float = 0.15
    sigma: float = 0.1
    r: float = 0.01
    rho: float = -0.9
    K: float = 100.0
    T: float = 2.0

    def __post_init__(self):
        if self.V0 < 0 or self.kappa <= 0 or self.theta <= 0 or self.sigma <= 0:
            raise ValueError("Heston parameters need V0 >= 0 and kappa, theta, sigma > 0")
        if abs(self.rho) > 1 or self.S0 <= 0 or self.K <= 0 or self.T < 0:
            raise ValueError("Heston parameters out of range")

    @property
    def feller(self) -> bool:
        """True when 2 kappa theta >= sigma^2."""
        return 2.0 * self.kappa * self.theta >= self.sigma**2


def _heston_cd(u, p: HestonParams, T):
    """Coefficients C(u), D(u) with ln E[exp(iu ln(S_T/S_0))] = C + D V0.

    Uses the rearranged characteristic function that avoids the branch cut
    of the complex logarithm.
    """
    u = np.asarray(u, dtype=complex)
    k, th, s, rho = p.kappa, p.theta, p.sigma, p.rho
    beta = k - rho * s * 1j * u
    d = np.sqrt(beta**2 + s**2 * (1j * u + u**2))
    g = (beta - d) / (beta + d)
    e = np.exp(-d * T)
    C = 1j * u * p.r * T + k * th / s**2 * ((beta - d) * T - 2.0 * np.log((1 - g * e) / (1 - g)))
    D = (beta - d) / s**2 * (1 - e) / (1 - g * e)
    return C, D


def heston_cf(u, p: HestonParams, V0=None, T=None):
    """Characteristic function of ln(S_T / S_0) under the pricing measure."""
    T = p.T if T is None else T
    V0 = p.V0 if V0 is None else V0
    C, D = _heston_cd(u, p, T)
    return np.exp(C + D * V0)


def _taylor_coefficients(fun, order=4, radius=0.05, points=32):
    # Cauchy integral on a small circle, evaluated by FFT
    theta = 2.0 * np.pi * np.arange(points) / points
    z = radius * np.exp(1j * theta)
    coef = np.fft.fft(fun(z)) / points
    return np.array([coef[n] / radius**n for n in range(order + 1)])


def heston_cumulants(p: HestonParams, V0=None, T=None):
    """First, second and fourth cumulants of ln(S_T / S_0).

    The cumulant generating function is affine in V0, so the cumulants are
    returned as arrays broadcast against ``V0``.
    """
    T = p.T if T is None else T
    V0 = np.asarray(p.V0 if V0 is None else V0, dtype=float)
    cc = _taylor_coefficients(lambda z: _heston_cd(z, p, T)[0])
    cd = _taylor_coefficients(lambda z: _heston_cd(z, p, T)[1])
    out = []
    for n in (1, 2, 4):
        scale = math.factorial(n) / (1j**n)
        out.append(np.real(cc[n] * scale) + np.real(cd[n] * scale) * V0)
    return tuple(out)


def _chi_psi(k, a, b, c, d):
    """Cosine-series coefficients of exp(y) and 1 on [c, d] within [a, b]."""
    w = k * np.pi / (b - a)
    wc, wd = w * (c - a), w * (d - a)
    chi = (np.cos(wd) * np.exp(d) - np.cos(wc) * np.exp(c)
           + w * (np.sin(wd) * np.exp(d) - np.sin(wc) * np.exp(c))) / (1.0 + w**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        psi = np.where(k == 0, d - c, (np.sin(wd) - np.sin(wc)) / np.where(k == 0, 1.0, w))
    return chi, psi


def heston_price_cos(p: HestonParams, side="call", n_terms: int = 256, truncation: float = 12.0,
                     S=None, V0=None, T=None):
    """European option price under Heston by the Fourier-cosine method.

    Parameters
    ----------
    p : HestonParams
    side : {"call", "put"}
    n_terms : int
        Number of cosine terms, at least 64.
    truncation : float
        Width of the integration range in units of the cumulant scale
        ``sqrt(c2 + sqrt(|c4|))``.
    S, V0 : array_like, optional
        Spot and initial variance overriding ``p``; broadcast together.
    T : float, optional
        Maturity overriding ``p.T``.

    Notes
    -----
    The Feller condition is not required; a violation is only logged.
    """
    if n_terms < 64:
        raise ValueError("n_terms must be at least 64")
    phi = _side_sign(side)
    T = p.T if T is None else float(T)
    S = np.asarray(p.S0 if S is None else S, dtype=float)
    V0 = np.asarray(p.V0 if V0 is None else V0, dtype=float)
    S, V0 = np.broadcast_arrays(S, V0)
    if not p.feller:
        log.debug("Feller condition violated: 2 kappa theta < sigma^2")
    if T <= 0:
        out = np.maximum(phi * (S - p.K), 0.0)
        return float(out) if out.ndim == 0 else out

    x = np.log(S / p.K).ravel()[:, None]
    c1, c2, c4 = heston_cumulants(p, V0.ravel(), T)
    width = truncation * np.sqrt(np.abs(c2) + np.sqrt(np.abs(c4)))
    a = (x[:, 0] + c1 - width)[:, None]
    b = (x[:, 0] + c1 + width)[:, None]

    k = np.arange(n_terms)[None, :]
    u = k * np.pi / (b - a)
    C, D = _heston_cd(u, p, T)
    cf = np.exp(C + D * V0.ravel()[:, None])
    if phi == 1:
        chi, psi = _chi_psi(k, a, b, 0.0, b)
        Vk = 2.0 / (b - a) * p.K * (chi - psi)
    else:
        chi, psi = _chi_psi(k, a, b, a, 0.0)
        Vk = 2.0 / (b - a) * p.K * (psi - chi)
    terms = np.real(cf * np.exp(1j * u * (x - a))) * Vk
    terms[:, 0] *= 0.5
    price = math.exp(-p.r * T) * terms.sum(axis=1)
    price = np.maximum(price, 0.0).reshape(S.shape)
    return float(price) if price.ndim == 0 else price


# ---------------------------------------------------------------------------
# Hull-White bonds and swaps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HullWhiteParams:
    """One-factor Hull-White parameters with a flat initial forward curve."""

    a: float = 0.1
    sigma: float = 0.01
    f0: float = 0.02

    def __post_init__(self):
        if self.a <= 0 or self.sigma < 0:
            raise ValueError("Hull-White needs a > 0 and sigma >= 0")

    def beta(self, t):
        """Deterministic shift with r(t) = x(t) + beta(t)."""
        t = np.asarray(t, dtype=float)
        return self.f0 + self.sigma**2 / (2 * self.a**2) * (1 - np.exp(-self.a * t)) ** 2


def hw_zero_bond(hw: HullWhiteParams, t, T, r):
    """Zero-coupon bond P(t, T) given the short rate r(t).

    P(t, T) = A(t, T) exp(-B(t, T) r(t)) with B = (1 - exp(-a(T - t)))/a and
    A fitted to the flat initial curve.
    """
    t = np.asarray(t, dtype=float)
    T = np.asarray(T, dtype=float)
    tau = T - t
    B = (1.0 - np.exp(-hw.a * tau)) / hw.a
    lnA = -hw.f0 * tau + B * hw.f0 - hw.sigma**2 / (4 * hw.a) * (1 - np.exp(-2 * hw.a * t)) * B**2
    return np.exp(lnA - B * np.asarray(r, dtype=float))


def simple_rate(hw: HullWhiteParams, t, T, r):
    """Simply compounded rate L(t, T) = (1/P(t, T) - 1)/(T - t)."""
    tau = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("simple_rate needs T > t")
    return (1.0 / hw_zero_bond(hw, t, T, r) - 1.0) / tau


@dataclass(frozen=True)
class SwapState:
    """Spot-starting payer-of-fixed interest rate swap.

    The holder receives floating and pays ``fixed_rate`` on resets
    ``t_0 < t_1 < ... < t_N`` spaced ``delta`` apart.  Values are per unit
    notional in the swap currency; ``currency`` indexes the rate factor and
    ``notional`` carries sign and size.
    """

    fixed_rate: float
    maturity: float
    delta: float = 0.5
    start: float = 0.0
    notional: float = 1.0
    currency: int = 0
    hw: HullWhiteParams = field(default_factory=HullWhiteParams)

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("reset period must be positive")
        n = (self.maturity - self.start) / self.delta
        if n < 1 - 1e-9 or abs(n - round(n)) > 1e-9:
            raise ValueError("maturity must be a positive whole number of periods after start")

    @property
    def n_periods(self) -> int:
        return int(round((self.maturity - self.start) / self.delta))

    @property
    def schedule(self) -> np.ndarray:
        return self.start + self.delta * np.arange(self.n_periods + 1)

    def locate(self, t: float) -> tuple[int, bool]:
        """Index n of the last reset with t_n <= t and whether t is a reset."""
        sched = self.schedule
        if t < sched[0] - 1e-9 or t > sched[-1] + 1e-9:
            raise ValueError(f"time {t} outside the swap schedule [{sched[0]}, {sched[-1]}]")
        pos = (t - self.start) / self.delta
        n = int(round(pos))
        if abs(pos - n) <= 1e-9:
            return n, True
        return int(math.floor(pos)), False


def _discount(hw, t, T, r):
    # 1 / (1 + (T - t) L(t, T)), which is the Hull-White bond itself
    return 1.0 / (1.0 + (T - t) * simple_rate(hw, t, T, r))


def irs_price(state: SwapState, t: float, r_t, r_reset=None):
    """Value of the swap at time ``t`` per unit notional.

    Parameters
    ----------
    state : SwapState
    t : float
        Valuation time within the reset schedule.
    r_t : array_like
        Short rate at ``t``.
    r_reset : array_like, optional
        Short rate at the reset fixing the current floating coupon: the
        previous reset when ``t`` is itself a reset date, otherwise the
        last reset before ``t``.  Unused at inception.

    Returns
    -------
    ndarray
        Value to the floating receiver, including coupons exchanged at
        ``t`` when ``t`` is a reset date.
    """
    hw, d = state.hw, state.delta
    sched = state.schedule
    N = state.n_periods
    n, at_reset = state.locate(t)
    r_t = np.asarray(r_t, dtype=float)
    if at_reset:
        t = float(sched[n])
        if n == 0:
            disc = sum(_discount(hw, t, sched[i], r_t) for i in range(1, N + 1))
            return 1.0 - _discount(hw, t, sched[N], r_t) - d * state.fixed_rate * disc
        if r_reset is None:
            raise ValueError("r_reset is required after inception")
        coupon = d * simple_rate(hw, sched[n - 1], sched[n], r_reset)
        fixed = 1.0 + sum(_discount(hw, t, sched[n + i], r_t) for i in range(1, N - n + 1))
        tail = _discount(hw, t, sched[N], r_t) if n < N else 1.0
        return 1.0 + coupon - tail - d * state.fixed_rate * fixed
    if r_reset is None:
        raise ValueError("r_reset is required after inception")
    coupon = 1.0 + d * simple_rate(hw, sched[n], sched[n + 1], r_reset)
    floating = coupon * _discount(hw, t, sched[n + 1], r_t)
    fixed = sum(_discount(hw, t, sched[n + i], r_t) for i in range(1, N - n + 1))
    return floating - _discount(hw, t, sched[N], r_t) - d * state.fixed_rate * fixed


def par_rate(state: SwapState, r0=None) -> float:
    """Fixed rate that sets the inception value to zero."""
    hw = state.hw
    r0 = hw.beta(state.start) if r0 is None else r0
    sched = state.schedule
    t = float(sched[0])
    annuity = state.delta * sum(float(_discount(hw, t, T, r0)) for T in sched[1:])
    return (1.0 - float(_discount(hw, t, sched[-1], r0))) / annuity
