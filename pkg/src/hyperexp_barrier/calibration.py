"""Maturity-by-maturity (bootstrap) calibration to European call quotes.

For each maturity in turn, the parameters of the newest period are fitted by
minimising the root-mean-square price error at that maturity while all
earlier periods stay frozen.  Jump rates ``alpha`` are fixed inputs.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .exceptions import DomainError
from .model import ModelPeriod, PiecewiseModel
from .transforms import carr_madan_call

SIGMA_BOUNDS = (1e-4, 2.0)
PI_BOUNDS = (0.0, 100.0)
MATURITY_TOL = 1e-9


class QuoteError(ValueError):
    """Malformed or inconsistent quote data."""


class CalibrationError(ValueError):
    """Quotes cannot support the requested fit."""


@dataclass(frozen=True)
class MarketQuote:
    maturity: float
    strike: float
    price: float
    implied_vol: float | None = None

    def __post_init__(self):
        if not self.maturity > 0:
            raise QuoteError("maturity must be positive")
        if not self.strike > 0:
            raise QuoteError("strike must be positive")
        if not self.price > 0:
            raise QuoteError("price must be positive")


@dataclass(frozen=True)
class CalibrationResult:
    model: PiecewiseModel
    rmse: float
    arpe: float
    trace: list[list[float]] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)
    per_maturity_rmse: list[float] = field(default_factory=list)


def group_quotes(quotes) -> dict[float, list[MarketQuote]]:
    out: dict[float, list[MarketQuote]] = {}
    for qt in quotes:
        out.setdefault(qt.maturity, []).append(qt)
    return {t: sorted(out[t], key=lambda q: q.strike) for t in sorted(out)}


def _float(row, key, line):
    try:
        return float(row[key])
    except (TypeError, ValueError):
        raise QuoteError(f"line {line}: cannot parse {key}={row.get(key)!r}") from None


def load_quotes(path, schedule=None) -> dict[float, list[MarketQuote]]:
    """Read ``maturity,strike,price[,implied_vol]`` rows, grouped by maturity.

    Duplicate ``(maturity, strike)`` rows keep the last occurrence.  When a
    ``schedule`` of maturities is given, every quote must sit on it.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"maturity", "strike", "price"}
        if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
            raise QuoteError(f"line 1: header must contain {sorted(need)}")
        reader.fieldnames = [f.strip() for f in reader.fieldnames]
        seen: dict[tuple[float, float], MarketQuote] = {}
        for row in reader:
            line = reader.line_num
            T, K, P = (_float(row, k, line) for k in ("maturity", "strike", "price"))
            iv = row.get("implied_vol")
            iv = _float(row, "implied_vol", line) if iv not in (None, "") else None
            try:
                qt = MarketQuote(T, K, P, iv)
            except QuoteError as exc:
                raise QuoteError(f"line {line}: {exc}") from None
            if schedule is not None and not np.any(np.abs(np.asarray(schedule) - T) < MATURITY_TOL):
                raise QuoteError(f"line {line}: maturity {T} not in schedule {tuple(schedule)}")
            if (T, K) in seen:
                warnings.warn(f"line {line}: duplicate quote (T={T}, K={K}); keeping the last one", stacklevel=2)
            seen[T, K] = qt
    if not seen:
        raise QuoteError(f"{path}: no quotes")
    return group_quotes(seen.values())


def save_quotes(quotes, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["maturity", "strike", "price"])
        for qt in quotes:
            w.writerow([repr(qt.maturity), repr(qt.strike), repr(qt.price)])


def _flatten(quotes) -> list[MarketQuote]:
    if isinstance(quotes, dict):
        return [q for qs in quotes.values() for q in qs]
    return list(quotes)


def _maturity_index(m: PiecewiseModel, T: float) -> int:
    hit = np.flatnonzero(np.abs(m.maturities - T) < MATURITY_TOL)
    if hit.size == 0:
        raise DomainError(f"maturity {T} is not a period end of the model")
    return int(hit[0]) + 1


def model_prices(m: PiecewiseModel, quotes, method: str = "quad") -> np.ndarray:
    quotes = _flatten(quotes)
    out = np.empty(len(quotes))
    by_maturity: dict[int, list[int]] = {}
    for j, q in enumerate(quotes):
        by_maturity.setdefault(_maturity_index(m, q.maturity), []).append(j)
    for i, idx in by_maturity.items():
        out[idx] = carr_madan_call(m, i, [quotes[j].strike for j in idx], method=method)
    return out


def fit_metrics(m: PiecewiseModel, quotes) -> tuple[float, float]:
    """RMSE of price errors and average relative price error (a fraction)."""
    quotes = _flatten(quotes)
    if not quotes:
        raise CalibrationError("no quotes")
    market = np.array([q.price for q in quotes])
    err = model_prices(m, quotes) - market
    return float(np.sqrt(np.mean(err**2))), float(np.mean(np.abs(err) / market))


def _arbitrage_warnings(T: float, qs: list[MarketQuote]) -> None:
    p = np.array([q.price for q in qs])
    if np.any(np.diff(p) > 0):
        warnings.warn(f"quotes at T={T} are not non-increasing in strike", stacklevel=3)


def bootstrap_calibrate(
    quotes,
    alpha_minus=(3.0, 10.0),
    schedule=None,
    r: float = 0.03,
    d: float = 0.0,
    spot: float = 4150.0,
    alpha_plus=(),
    fit_positive: bool = False,
    starts: int = 5,
    seed: int = 0,
    tol: float = 1e-8,
    maxfev: int = 3000,
    explore: int = 300,
) -> CalibrationResult:
    """Fit ``(sigma, pi^-_1, ..., [pi^+_1, ...])`` period by period.

    ``schedule`` lists the maturities (cumulative, in years); by default the
    distinct quote maturities.  Positive-jump intensities are only fitted when
    ``fit_positive`` is set, otherwise they are zero.
    """
    grouped = group_quotes(_flatten(quotes))
    if schedule is None:
        schedule = list(grouped)
    schedule = [float(t) for t in schedule]
    if np.any(np.diff([0.0] + schedule) <= 0):
        raise CalibrationError("schedule must be strictly increasing")
    alpha_minus = tuple(float(a) for a in alpha_minus)
    alpha_plus = tuple(float(a) for a in alpha_plus)
    if fit_positive and not alpha_plus:
        raise CalibrationError("fit_positive needs positive jump rates")
    n_free = 1 + len(alpha_minus) + (len(alpha_plus) if fit_positive else 0)
    rng = np.random.default_rng(seed)
    bounds = [SIGMA_BOUNDS] + [PI_BOUNDS] * (n_free - 1)

    periods: list[ModelPeriod] = []
    trace, iters, conv, per_rmse = [], [], [], []
    prev = 0.0
    for i, T in enumerate(schedule, start=1):
        qs = [q for t, qq in grouped.items() if abs(t - T) < MATURITY_TOL for q in qq]
        if len(qs) < n_free:
            raise CalibrationError(f"insufficient quotes at maturity {T}: {len(qs)} < {n_free}")
        _arbitrage_warnings(T, qs)
        strikes = np.array([q.strike for q in qs])
        market = np.array([q.price for q in qs])
        duration = T - prev
        prev = T

        def build(x):
            nm = len(alpha_minus)
            pm = tuple(x[1:1 + nm])
            pp = tuple(x[1 + nm:]) if fit_positive else tuple(0.0 for _ in alpha_plus)
            return ModelPeriod(duration, float(x[0]), pp, alpha_plus, pm, alpha_minus)

        def objective(x):
            x = np.clip(x, [b[0] for b in bounds], [b[1] for b in bounds])
            m = PiecewiseModel(tuple(periods) + (build(x),), r, d, spot)
            model = carr_madan_call(m, i, strikes, method="gauss")
            return float(np.sqrt(np.mean((model - market) ** 2)))

        guesses = [np.r_[0.2, np.full(n_free - 1, 0.5)]]
        for _ in range(starts - 1):
            guesses.append(np.r_[rng.uniform(0.05, 0.5), rng.uniform(0.0, 5.0, n_free - 1)])
        lo, hi = [b[0] for b in bounds], [b[1] for b in bounds]

        def run(x0, fatol, budget):
            return optimize.minimize(
                objective,
                x0,
                method="Nelder-Mead",
                bounds=bounds,
                options={"fatol": fatol, "xatol": 1e-9, "maxfev": budget, "adaptive": True},
            )

        # short exploratory runs from every start, then polish the best one,
        # restarting the simplex until a full cycle gains less than tol
        best, values, nfev = None, [], 0
        for x0 in guesses:
            res = run(x0, 1e3 * tol, explore)
            nfev += res.nfev
            values.append(float(res.fun))
            if best is None or res.fun < best.fun:
                best = res
        while True:
            again = run(np.clip(best.x, lo, hi), tol, maxfev)
            nfev += again.nfev
            gained = best.fun - again.fun
            if again.fun <= best.fun:
                best = again
            if gained < tol:
                break
        values.append(float(best.fun))
        ok = bool(best.success)
        if not ok:
            warnings.warn(f"optimizer did not converge at maturity {T}; returning best point found", stacklevel=2)
        periods.append(build(np.clip(best.x, [b[0] for b in bounds], [b[1] for b in bounds])))
        trace.append(values)
        iters.append(nfev)
        conv.append(ok)
        per_rmse.append(float(best.fun))

    model = PiecewiseModel(tuple(periods), r, d, spot)
    rmse, arpe = fit_metrics(model, grouped)
    return CalibrationResult(model, rmse, arpe, trace, iters, conv, per_rmse)


def synthetic_quotes(m: PiecewiseModel, moneyness=None, method: str = "quad") -> list[MarketQuote]:
    """Noise-free call quotes from a model at each period end."""
    if moneyness is None:
        moneyness = np.linspace(0.7, 1.3, 20)
    strikes = m.spot * np.asarray(moneyness, dtype=float)
    out = []
    for i, T in enumerate(m.maturities, start=1):
        prices = carr_madan_call(m, i, strikes, method=method)
        out.extend(MarketQuote(float(T), float(k), float(p)) for k, p in zip(strikes, prices) if p > 0)
    return out


def implied_vol_bs(price: float, spot: float, strike: float, T: float, r: float, d: float = 0.0) -> float:
    """Black-Scholes implied volatility of a call price (nan if out of bounds)."""
    from scipy.stats import norm

    def bs(s):
        sd = s * math.sqrt(T)
        d1 = (math.log(spot / strike) + (r - d + 0.5 * s * s) * T) / sd
        return spot * math.exp(-d * T) * norm.cdf(d1) - strike * math.exp(-r * T) * norm.cdf(d1 - sd)

    lo = max(spot * math.exp(-d * T) - strike * math.exp(-r * T), 0.0)
    if not lo < price < spot * math.exp(-d * T):
        return math.nan
    return optimize.brentq(lambda s: bs(s) - price, 1e-6, 5.0, xtol=1e-12)
