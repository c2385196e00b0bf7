"""Command-line front end: ``gpcva run <config.yaml> [--out DIR] [--threads K]``.

A scenario file names one pipeline and the model, portfolio, GP,
simulation and credit blocks it needs.  Missing blocks take the defaults
below.  Every run writes ``manifest.json``, delimited tables and PNG
figures into the output directory.  Reports are a pure function of the
configuration: all randomness derives from the root seed through
``sub_seed(root, label) = (root + crc32(label)) mod 2**32``.

Exit codes: 0 success, 2 unreadable or unparsable configuration, 3 failed
validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import platform
import sys
import zlib
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy
import yaml
from scipy import linalg
from scipy.stats import ks_2samp

from . import credit, gp, mgp, paths, plotting, pricers, xva
from .errors import ConfigError, GpcvaError
from .kernels import linear, matern, squared_exponential
from .optim import OptimizerCfg

log = logging.getLogger("gpcva")

EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERIC = 2, 3, 4

DEFAULTS = {
    "model": {
        "bs": {"S0": 100.0, "r": 0.0, "sigma": 0.3},
        "heston": {},
        "hw_fx": {
            "rates": [{"a": 0.1, "sigma": 0.01, "f0": 0.02}, {"a": 0.05, "sigma": 0.012, "f0": 0.03}],
            "fx0": [1.1],
            "fx_vol": [0.1],
            "rate_rate": 0.45,
            "rate_fx": 0.30,
            "fx_fx": 0.15,
            "hazard": 0.02,
        },
    },
    "portfolio": [
        {"type": "call", "strike": 110.0, "weight": 2.0, "maturity": 2.0},
        {"type": "put", "strike": 90.0, "weight": -1.0, "maturity": 2.0},
    ],
    "gp": {
        "kernel": {"family": "se", "lengthscale": 0.2, "nu": 2.5},
        "noise": 1e-3,
        "training_points": 100,
        "lb": 0.001,
        "ub": 300.0,
        "multi_output": False,
        "optimizer": {"iterations": 300, "learning_rate": 0.1, "restarts": 2},
    },
    "simulation": {"M": 1000, "steps": 100, "T": 2.0, "store_every": 1, "training_paths": 1000},
    "credit": {
        "gamma0": 0.02,
        "gamma1": 1.2,
        "recovery": 0.4,
        "target": 0.05,
        "prior": {"center": 1.2, "scale": 1.0, "count": 100},
    },
    "nested": {"outer": 200, "inner": 200, "horizon": 1.0, "alpha": 0.99},
    "output": {"dir": "out", "figures": True, "dump_paths": False},
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def sub_seed(root: int, label: str) -> int:
    """Deterministic per-module seed derived from the root seed."""
    return (int(root) + zlib.crc32(label.encode())) % 2**32


def _schema() -> dict:
    return json.loads(resources.files("gpcva").joinpath("data/scenario.schema.json").read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> dict:
    """Read, validate and complete a scenario file.

    Raises ConfigError with ``exit_code`` 2 for unreadable or malformed
    YAML and 3 for schema or consistency violations.
    """
    try:
        text = Path(path).read_text()
        raw = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse configuration: {exc}".splitlines()[0], exit_code=EXIT_PARSE) from exc
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping", exit_code=EXIT_PARSE)
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as exc:
        field = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid field {field}: {exc.message}", field=field) from None
    cfg = _merge(DEFAULTS, raw)
    _check_consistency(cfg)
    return cfg


def _check_consistency(cfg: dict) -> None:
    sim = cfg["simulation"]
    if sim["steps"] % sim["store_every"]:
        raise ConfigError("simulation.steps must be a multiple of simulation.store_every",
                          field="simulation.steps")
    kinds = {item["type"] for item in cfg["portfolio"]}
    irs = cfg["pipeline"] == "irs-portfolio"
    for i, item in enumerate(cfg["portfolio"]):
        if item["type"] in ("call", "put") and "strike" not in item:
            raise ConfigError("options need a strike", field=f"portfolio.{i}.strike")
        if item["type"] == "swap":
            if "maturity" not in item:
                raise ConfigError("swaps need a maturity", field=f"portfolio.{i}.maturity")
            if item.get("currency", 0) >= len(cfg["model"]["hw_fx"]["rates"]):
                raise ConfigError("unknown swap currency", field=f"portfolio.{i}.currency")
    if irs and kinds != {"swap"}:
        raise ConfigError("irs-portfolio needs a portfolio of swaps only", field="portfolio")
    if not irs and "swap" in kinds:
        raise ConfigError(f"pipeline {cfg['pipeline']} supports options only", field="portfolio")
    hw = cfg["model"]["hw_fx"]
    n_foreign = len(hw["rates"]) - 1
    if len(hw["fx0"]) != n_foreign or len(hw["fx_vol"]) != n_foreign:
        raise ConfigError("one FX level and volatility per foreign currency", field="model.hw_fx.fx0")
    g = cfg["gp"]
    if g["lb"] >= g["ub"]:
        raise ConfigError("gp.lb must be below gp.ub", field="gp.lb")
    if cfg["nested"]["horizon"] >= sim["T"] and cfg["pipeline"] == "cva1-var":
        raise ConfigError("nested.horizon must be before the simulation horizon", field="nested.horizon")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _kernel(cfg):
    k = cfg["gp"]["kernel"]
    ls = k.get("lengthscale", 0.2)
    if k["family"] == "se":
        return squared_exponential(ls)
    if k["family"] == "matern":
        return matern(k.get("nu", 2.5), ls)
    return linear() + squared_exponential(ls)


def _opt(cfg, seed):
    o = cfg["gp"]["optimizer"]
    return OptimizerCfg(iterations=o["iterations"], learning_rate=o["learning_rate"],
                        restarts=o["restarts"], seed=seed)


def _option_portfolio(cfg):
    bs = cfg["model"]["bs"]
    T = cfg["simulation"]["T"]
    out = []
    for item in cfg["portfolio"]:
        mat = item.get("maturity", T)
        name = f"{item['type']}{item['strike']:g}"
        out.append(xva.bs_option(name, item["type"], item["strike"], item["weight"], mat, bs["r"], bs["sigma"]))
    return out


def _training_grid(cfg):
    g = cfg["gp"]
    return np.linspace(g["lb"], g["ub"], g["training_points"])[:, None]


def _fit_option_models(cfg, portfolio, times, ctx):
    g = cfg["gp"]
    grid = _training_grid(cfg)
    sub = g.get("subsample")
    return xva.fit_date_models(
        portfolio, times, lambda inst, t: grid, _kernel(cfg), noise0=g["noise"],
        opt=_opt(cfg, ctx.seed("gp")), x_bounds=(g["lb"], g["ub"]), subsample=sub, workers=ctx.threads)


def _box(cfg):
    # exact repricing sees the same clamped states as the surrogate
    return (cfg["gp"]["lb"], cfg["gp"]["ub"])


def _gbm(cfg, seed, M=None, T=None, steps=None, S0=None, t0=0.0):
    bs, sim = cfg["model"]["bs"], cfg["simulation"]
    return paths.simulate_gbm(bs["S0"] if S0 is None else S0, bs["r"], bs["sigma"],
                              sim["T"] if T is None else T, sim["steps"] if steps is None else steps,
                              sim["M"] if M is None else M, seed, sim["store_every"], t0)


def _intensity(cfg):
    c = cfg["credit"]
    return credit.IntensityModel(c["gamma0"], c["gamma1"], cfg["model"]["bs"]["S0"], c["recovery"])


class _Context:
    def __init__(self, cfg, out: Path, threads: int):
        self.cfg = cfg
        self.out = out
        self.threads = max(1, int(threads))
        self.files: list[str] = []
        self.seeds: dict[str, int] = {}

    def seed(self, label: str) -> int:
        s = sub_seed(self.cfg["seed"], label)
        self.seeds[label] = s
        return s

    def table(self, name, header, rows):
        xva.write_table(self.out / name, header, rows)
        self.files.append(name)

    def figure(self, name, fn, *args, **kw):
        if self.cfg["output"]["figures"]:
            fn(self.out / name, *args, **kw)
            self.files.append(name)

    def dump(self, name, pathset):
        if self.cfg["output"]["dump_paths"]:
            pathset.to_csv(self.out / name)
            self.files.append(name)


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def _run_fit_gp(ctx):
    cfg = ctx.cfg
    port = _option_portfolio(cfg)
    X = _training_grid(cfg)
    g = cfg["gp"]
    Xs = np.linspace(g["lb"], g["ub"], 2 * g["training_points"])[:, None]
    cols, header = [Xs[:, 0]], ["S"]
    if g["multi_output"]:
        Y = np.column_stack([inst.price(0.0, X) for inst in port])
        model = mgp.fit_multi(X, Y, matern(2.5, g["kernel"].get("lengthscale", 0.2)), _opt(cfg, ctx.seed("gp")),
                              noise0=max(g["noise"], 1e-6), x_bounds=(g["lb"], g["ub"]))
        w = np.array([inst.weight for inst in port])
        Mh, S, Om = mgp.predict_multi(model, Xs, full_cov=False)
        pm, pv = mgp.portfolio_posterior(model, w, Xs, full_cov=False)
        exact = sum(inst.weight * inst.price(0.0, Xs) for inst in port)
        band = 1.96 * np.sqrt(np.maximum(pv, 0))
        for k, inst in enumerate(port):
            cols += [inst.price(0.0, Xs), Mh[:, k]]
            header += [f"exact_{inst.name}", f"mean_{inst.name}"]
        cols += [exact, pm, pm - band, pm + band]
        header += ["exact_portfolio", "mean_portfolio", "lo_portfolio", "hi_portfolio"]
        ctx.table("task_covariance.csv", ["row", *[i.name for i in port]],
                  [(inst.name, *Om[k]) for k, inst in enumerate(port)])
        gp.save_model(model, ctx.out / "mgp_model.json")
        ctx.files.append("mgp_model.json")
        ctx.figure("portfolio_fit.png", plotting.line_band, Xs[:, 0],
                   {"exact": exact, "multi-output GP": pm}, (pm - band, pm + band), "S", "portfolio value")
    else:
        for inst in port:
            model = gp.fit(X, inst.price(0.0, X), _kernel(cfg), g["noise"], _opt(cfg, ctx.seed("gp")),
                           x_bounds=(g["lb"], g["ub"]))
            mean, var = gp.predict(model, Xs)
            sd = np.sqrt(var)
            exact = inst.price(0.0, Xs)
            cols += [exact, mean, mean - 1.96 * sd, mean + 1.96 * sd]
            header += [f"exact_{inst.name}", f"mean_{inst.name}", f"lo_{inst.name}", f"hi_{inst.name}"]
            gp.save_model(model, ctx.out / f"model_{inst.name}.json")
            ctx.files.append(f"model_{inst.name}.json")
            ctx.figure(f"fit_{inst.name}.png", plotting.line_band, Xs[:, 0], {"exact": exact, "GP": mean},
                       (mean - 1.96 * sd, mean + 1.96 * sd), "S", "price")
    ctx.table("predictions.csv", header, zip(*cols))


def _run_price_surface(ctx):
    cfg = ctx.cfg
    hp = pricers.HestonParams(**cfg["model"]["heston"])
    g = cfg["gp"]
    n = min(g["training_points"], 30)
    s_tr, v_tr = np.linspace(g["lb"], g["ub"], n), np.linspace(0.05, 1.0, n)
    s_te, v_te = np.linspace(g["lb"], g["ub"], n + 10), np.linspace(0.05, 1.0, n + 10)
    Str, Vtr = np.meshgrid(s_tr, v_tr)
    Ste, Vte = np.meshgrid(s_te, v_te)
    Xtr = np.column_stack([Str.ravel(), Vtr.ravel()])
    Xte = np.column_stack([Ste.ravel(), Vte.ravel()])
    rows = []
    for side in ("call", "put"):
        ytr = pricers.heston_price_cos(hp, side, S=Xtr[:, 0], V0=Xtr[:, 1] ** 2)
        yte = pricers.heston_price_cos(hp, side, S=Xte[:, 0], V0=Xte[:, 1] ** 2)
        model = gp.fit(Xtr, ytr, _kernel(cfg), g["noise"], _opt(cfg, ctx.seed("gp")),
                       x_bounds=((g["lb"], 0.05), (g["ub"], 1.0)))
        mean, var = gp.predict(model, Xte)
        rows += [(side, s, v, e, m, np.sqrt(q)) for s, v, e, m, q in zip(Xte[:, 0], Xte[:, 1], yte, mean, var)]
        ctx.figure(f"surface_{side}.png", plotting.surface_error, Ste, Vte, yte.reshape(Ste.shape),
                   mean.reshape(Ste.shape), "S", "sqrt(V)")
    ctx.table("surface.csv", ["side", "S", "sqrt_v", "exact", "gp_mean", "gp_sd"], rows)


def _run_greeks(ctx):
    cfg = ctx.cfg
    g, bs = cfg["gp"], cfg["model"]["bs"]
    inst = next(item for item in cfg["portfolio"] if item["type"] in ("call", "put"))
    side, K, T = inst["type"], inst["strike"], inst.get("maturity", cfg["simulation"]["T"])
    n = g["training_points"]
    lo, hi = g["lb"], g["ub"]
    X = np.linspace(lo, hi, n)[:, None]
    Xs = np.linspace(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), 2 * n)[:, None]
    model = gp.fit(X, pricers.bs_price(side, X[:, 0], K, bs["r"], T, bs["sigma"])[0], _kernel(cfg), 0.0,
                   _opt(cfg, ctx.seed("gp-delta")), x_bounds=(lo, hi))
    d_gp = gp.predict_gradient(model, Xs)[:, 0]
    d_ex = pricers.bs_price(side, Xs[:, 0], K, bs["r"], T, bs["sigma"])[1]
    ctx.table("delta.csv", ["S", "delta_exact", "delta_gp", "error"], zip(Xs[:, 0], d_ex, d_gp, d_gp - d_ex))
    ctx.figure("delta.png", plotting.line_band, Xs[:, 0], {"closed form": d_ex, "GP": d_gp}, None, "S", "delta")
    S0 = bs["S0"]
    V = np.linspace(0.05, 1.0, n)[:, None]
    Vs = np.linspace(0.05 + 0.095, 1.0 - 0.095, 2 * n)[:, None]
    model = gp.fit(V, pricers.bs_price(side, S0, K, bs["r"], T, V[:, 0])[0], _kernel(cfg), 0.0,
                   _opt(cfg, ctx.seed("gp-vega")), x_bounds=(0.05, 1.0))
    v_gp = gp.predict_gradient(model, Vs)[:, 0]
    v_ex = pricers.bs_price(side, S0, K, bs["r"], T, Vs[:, 0])[2]
    ctx.table("vega.csv", ["sigma", "vega_exact", "vega_gp", "error"], zip(Vs[:, 0], v_ex, v_gp, v_gp - v_ex))
    ctx.figure("vega.png", plotting.line_band, Vs[:, 0], {"closed form": v_ex, "GP": v_gp}, None, "sigma", "vega")


def _bs_cubes(ctx, with_models=True):
    cfg = ctx.cfg
    port = _option_portfolio(cfg)
    p = _gbm(cfg, ctx.seed("paths"))
    ctx.dump("paths.csv", p)
    ex = xva.exposure_cube(xva.ExactValuer(port, _box(cfg)), p, r=cfg["model"]["bs"]["r"])
    models = _fit_option_models(cfg, port, p.grid[1:], ctx) if with_models else None
    cg = xva.exposure_cube(xva.GpValuer(port, models), p, r=cfg["model"]["bs"]["r"]) if models else None
    return port, p, ex, cg, models


def _epe_outputs(ctx, ex, cg):
    e_ex, e_gp = xva.epe_profile(ex), xva.epe_profile(cg)
    hdr = ["date", "epe", "band_lo", "band_hi"]
    ctx.table("epe_exact.csv", hdr, e_ex.rows())
    ctx.table("epe_gp.csv", hdr, e_gp.rows())
    ctx.figure("epe.png", plotting.line_band, e_gp.times, {"MC-reval": e_ex.epe, "MC-GP": e_gp.epe},
               (np.maximum(e_gp.epe - e_gp.band, 0), e_gp.epe + e_gp.band), "t", "EPE")
    return e_ex, e_gp


def _run_epe(ctx):
    _, _, ex, cg, _ = _bs_cubes(ctx)
    _epe_outputs(ctx, ex, cg)


def _cva_rows(label, rep):
    return [(f"{label}_{name}", v, lo, hi) for name, v, lo, hi in rep.rows()]


def _run_cva0(ctx):
    cfg = ctx.cfg
    _, p, ex, cg, _ = _bs_cubes(ctx)
    _epe_outputs(ctx, ex, cg)
    gamma = credit.intensity(_intensity(cfg), p.factor("S"))
    R = cfg["credit"]["recovery"]
    r_ex, r_gp = xva.cva0_from_cube(ex, gamma, R), xva.cva0_from_cube(cg, gamma, R)
    ctx.table("cva.csv", ["metric", "value", "ci_lo", "ci_hi"], _cva_rows("reval", r_ex) + _cva_rows("gp", r_gp))


def _run_cva1(ctx):
    cfg = ctx.cfg
    nest, bs, sim = cfg["nested"], cfg["model"]["bs"], cfg["simulation"]
    port, p, ex, cg, models = _bs_cubes(ctx)
    model = _intensity(cfg)
    gamma = credit.intensity(model, p.factor("S"))
    c0_ex = xva.cva0_from_cube(ex, gamma).cva
    c0_gp = xva.cva0_from_cube(cg, gamma).cva
    h = nest["horizon"]
    dt = sim["T"] / sim["steps"]
    steps_outer = int(round(h / dt))
    steps_inner = sim["steps"] - steps_outer
    outer = _gbm(cfg, ctx.seed("outer"), M=nest["outer"], T=h, steps=steps_outer)

    def inner(S, seed):
        return paths.simulate_gbm(S, bs["r"], bs["sigma"], sim["T"] - h, steps_inner, S.size, seed,
                                  sim["store_every"], t0=h)

    seed_in = ctx.seed("inner")
    res = {}
    for label, valuer in (("reval", xva.ExactValuer(port, _box(cfg))), ("gp", xva.GpValuer(port, models, variance=False))):
        res[label] = xva.cva1_distribution(valuer, outer, inner, nest["inner"], model, seed=seed_in, r=bs["r"])
    ctx.table("cva1_samples.csv", ["path", "S1", "cva1_reval", "cva1_gp"],
              [(j, s, a, b) for j, (s, a, b) in enumerate(zip(res["reval"].outer_states, res["reval"].samples,
                                                                res["gp"].samples))])
    a = nest["alpha"]
    v_ex, v_gp = xva.cva_var(res["reval"].samples - c0_ex, a), xva.cva_var(res["gp"].samples - c0_gp, a)
    ks = ks_2samp(res["reval"].samples, res["gp"].samples, method="asymp").statistic
    nan = float("nan")
    ctx.table("cva_var.csv", ["metric", "value", "ci_lo", "ci_hi"], [
        ("reval_cva0", c0_ex, nan, nan), ("gp_cva0", c0_gp, nan, nan),
        ("reval_var", v_ex, nan, nan), ("gp_var", v_gp, nan, nan), ("ks_statistic", float(ks), nan, nan)])
    ctx.figure("cva1_hist.png", plotting.histograms, {"MC-reval": res["reval"].samples, "MC-GP": res["gp"].samples},
               xlabel="CVA at horizon")


def _run_uq(ctx):
    cfg = ctx.cfg
    c = cfg["credit"]
    _, p, ex, cg, _ = _bs_cubes(ctx)
    pr = c["prior"]
    draws = credit.sample_gamma1_prior(pr["center"], pr["scale"], pr["count"], ctx.seed("prior"))
    base = _intensity(cfg)
    S = p.factor("S")
    u_ex = xva.uq_cva(draws, c["target"], ex, S, base)
    u_gp = xva.uq_cva(draws, c["target"], cg, S, base)
    ctx.table("uq.csv", ["draw", "gamma1", "gamma0", "cva_reval", "se_reval", "cva_gp", "se_gp"],
              [(k, g1, g0, a, sa, b, sb) for k, (g1, g0, a, sa, b, sb) in
               enumerate(zip(draws, u_ex.gamma0, u_ex.cva, u_ex.std_error, u_gp.cva, u_gp.std_error))])
    q_ex, q_gp = u_ex.quantiles(), u_gp.quantiles()
    ctx.table("uq_summary.csv", ["metric", "value", "ci_lo", "ci_hi"], [
        ("reval_median", q_ex[1], q_ex[0], q_ex[2]), ("gp_median", q_gp[1], q_gp[0], q_gp[2]),
        ("failures", float(u_ex.failures), float("nan"), float("nan"))])
    ctx.figure("uq_density.png", plotting.histograms, {"MC-reval": u_ex.cva, "MC-GP": u_gp.cva}, xlabel="CVA0")
    ctx.figure("uq_gamma1.png", plotting.scatter_xy, draws, {"MC-reval": u_ex.cva, "MC-GP": u_gp.cva},
               "gamma1", "CVA0")


def _rates_config(cfg):
    h = cfg["model"]["hw_fx"]
    hw = tuple(pricers.HullWhiteParams(r["a"], r["sigma"], r["f0"]) for r in h["rates"])
    return paths.RatesFxConfig(hw, tuple(h["fx0"]), tuple(h["fx_vol"]), h["rate_rate"], h["rate_fx"], h["fx_fx"])


def _swap_portfolio(cfg, rates):
    out = []
    for k, item in enumerate(cfg["portfolio"]):
        ccy = item.get("currency", 0)
        hw = rates.hw[ccy]
        kw = dict(maturity=item["maturity"], delta=item.get("delta", 0.5), notional=item.get("notional", 1.0),
                  currency=ccy, hw=hw)
        fixed = item.get("fixed_rate", "par")
        if fixed == "par":
            fixed = pricers.par_rate(pricers.SwapState(0.0, **kw))
        swap = pricers.SwapState(float(fixed), **kw)
        out.append(xva.swap_instrument(f"swap{k}_ccy{ccy}", swap, item["weight"]))
    return out


def _run_irs(ctx):
    cfg = ctx.cfg
    sim, g = cfg["simulation"], cfg["gp"]
    rates = _rates_config(cfg)
    port = _swap_portfolio(cfg, rates)
    T = max(inst.maturity for inst in port)
    coarse = T / sim["steps"] * sim["store_every"]
    for k, item in enumerate(cfg["portfolio"]):
        for t in (item.get("delta", 0.5), item["maturity"]):
            if abs(t / coarse - round(t / coarse)) > 1e-9:
                raise ConfigError(f"swap dates must fall on the exposure grid of spacing {coarse:g}",
                                  field=f"portfolio.{k}")
    train = paths.simulate_hw_fx(rates, T, sim["steps"], sim["training_paths"], ctx.seed("train-paths"),
                                 sim["store_every"])
    test = paths.simulate_hw_fx(rates, T, sim["steps"], sim["M"], ctx.seed("paths"), sim["store_every"])
    ctx.dump("paths.csv", test)
    models = xva.fit_date_models(port, train.grid[1:], lambda inst, t: inst.features(train, train.index_of(t)),
                                 _kernel(cfg), noise0=g["noise"], opt=_opt(cfg, ctx.seed("gp")),
                                 subsample=g.get("subsample"), workers=ctx.threads)
    ex = xva.exposure_cube(xva.ExactValuer(port), test)
    cg = xva.exposure_cube(xva.GpValuer(port, models), test)
    _epe_outputs(ctx, ex, cg)
    lam = cfg["model"]["hw_fx"]["hazard"]
    t = test.grid
    dp = np.exp(-lam * t[:-1]) - np.exp(-lam * t[1:])
    R = cfg["credit"]["recovery"]
    r_ex, r_gp = xva.cva0_independent(ex, dp, R), xva.cva0_independent(cg, dp, R)
    rel = abs(r_gp.cva - r_ex.cva) / abs(r_ex.cva) if r_ex.cva else float("nan")
    nan = float("nan")
    ctx.table("cva.csv", ["metric", "value", "ci_lo", "ci_hi"],
              _cva_rows("reval", r_ex) + _cva_rows("gp", r_gp) + [("relative_gap", rel, nan, nan)])


PIPELINES = {
    "fit-gp": _run_fit_gp,
    "price-surface": _run_price_surface,
    "greeks": _run_greeks,
    "epe": _run_epe,
    "cva0": _run_cva0,
    "cva1-var": _run_cva1,
    "uq": _run_uq,
    "irs-portfolio": _run_irs,
}


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"gpcva": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run_scenario(config_path, out=None, threads: int = 1, dump_paths: bool = False) -> int:
    """Run one scenario file; return the process exit status."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"gpcva: {exc}", file=sys.stderr)
        return exc.exit_code
    if dump_paths:
        cfg["output"]["dump_paths"] = True
    outdir = Path(out if out is not None else cfg["output"]["dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    ctx = _Context(cfg, outdir, threads)
    try:
        with np.errstate(over="ignore", under="ignore"):
            PIPELINES[cfg["pipeline"]](ctx)
    except ConfigError as exc:
        print(f"gpcva: {exc}", file=sys.stderr)
        return exc.exit_code
    except (GpcvaError, linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"gpcva: numerical failure in {cfg['pipeline']}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest = {
        "pipeline": cfg["pipeline"],
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "sub_seeds": dict(sorted(ctx.seeds.items())),
        "versions": _versions(),
        "outputs": sorted(ctx.files),
        "config": cfg,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gpcva", description="GP surrogates for pricing and CVA")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("config", help="YAML scenario file")
    run.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    run.add_argument("--threads", type=int, default=1, help="threads for independent GP fits")
    run.add_argument("--dump-paths", action="store_true", help="also write simulated paths")
    run.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run_scenario(args.config, args.out, args.threads, args.dump_paths)


if __name__ == "__main__":
    sys.exit(main())
