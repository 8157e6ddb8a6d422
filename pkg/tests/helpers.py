"""Shared fixtures-by-function for the test suite."""

import math

import numpy as np
from scipy.stats import norm

from hyperexp_barrier.model import ModelPeriod, PiecewiseModel
from hyperexp_barrier.transforms import talbot_invert


def _rates(rng, n, lo, hi, gap=0.3):
    while True:
        a = np.sort(rng.uniform(lo, hi, n))
        if n < 2 or np.min(np.diff(a)) > gap:
            return tuple(float(x) for x in a)


def random_model(rng, max_periods=4, max_jumps=3, spot=100.0, alpha_plus_min=1.5) -> PiecewiseModel:
    """A random valid model: N <= max_periods, n+/n- <= max_jumps.

    Jump rates are redrawn per period, so poles differ across periods.
    """
    N = int(rng.integers(1, max_periods + 1))
    npl = int(rng.integers(0, max_jumps + 1))
    nmi = int(rng.integers(0, max_jumps + 1))
    periods = []
    for _ in range(N):
        periods.append(
            ModelPeriod(
                duration=float(rng.uniform(0.1, 2.0)),
                sigma=float(rng.uniform(0.05, 0.5)),
                pi_plus=tuple(rng.uniform(0.0, 3.0, npl)),
                alpha_plus=_rates(rng, npl, alpha_plus_min, 20.0),
                pi_minus=tuple(rng.uniform(0.0, 3.0, nmi)),
                alpha_minus=_rates(rng, nmi, 0.5, 20.0),
            )
        )
    return PiecewiseModel(tuple(periods), r=float(rng.uniform(0.0, 0.08)), d=float(rng.uniform(0.0, 0.03)), spot=spot)


def brownian_model(sigma, r, T, d=0.0, spot=1.0) -> PiecewiseModel:
    return PiecewiseModel((ModelPeriod(T, sigma),), r=r, d=d, spot=spot)


def reflection_did(spot, barrier, sigma, mu, T, r):
    """Discounted probability that drifted Brownian motion in log-price hits
    ``log(H/S)`` before ``T`` (reflection principle)."""
    h = math.log(barrier / spot)
    s = sigma * math.sqrt(T)
    p = norm.cdf((h - mu * T) / s) + math.exp(2 * mu * h / sigma**2) * norm.cdf((h + mu * T) / s)
    return math.exp(-r * T) * p


def black_scholes_call(spot, strike, T, r, sigma, d=0.0):
    sd = sigma * math.sqrt(T)
    d1 = (math.log(spot / strike) + (r - d + 0.5 * sigma**2) * T) / sd
    return spot * math.exp(-d * T) * norm.cdf(d1) - strike * math.exp(-r * T) * norm.cdf(d1 - sd)


# transforms with known inverses: (fhat, f)
LIBRARY = {
    "1/q": (lambda q: 1 / q, lambda t: 1.0),
    "1/q^2": (lambda q: 1 / q**2, lambda t: t),
    "1/(q+a)": (lambda q: 1 / (q + 0.7), lambda t: math.exp(-0.7 * t)),
    "q/(q^2+1)": (lambda q: q / (q**2 + 1), lambda t: math.cos(t)),
}


def talbot_errors(M, horizons=(0.5, 1.0, 2.0)):
    out = {}
    for name, (fhat, f) in LIBRARY.items():
        worst = 0.0
        for T in horizons:
            got = talbot_invert(lambda q: fhat(q[:, 0]), [T], M=M)
            worst = max(worst, abs(got - f(T)) / abs(f(T)))
        out[name] = worst
    return out


def direct_dft(x, nu):
    n = x.size
    j = np.arange(n)
    return np.exp(-2j * np.pi * nu * np.outer(j, j)) @ x
