"""Hyper-exponential additive model with piecewise constant parameters.

The log-price ``X`` is a jump diffusion whose local triplet (drift, volatility,
jump intensities) is constant on each period ``(T_{i-1}, T_i]``.  Jumps are
hyper-exponential: on each side of zero the Levy density is a finite mixture
of exponential densities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DomainError, ModelError

ALPHA_PLUS_MIN = 1.0 + 1e-9
RATE_SEPARATION = 1e-9


def _as_tuple(values) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class ModelPeriod:
    """Parameters on one period of constant local characteristics.

    ``pi_plus[k]``/``alpha_plus[k]`` are the intensity and rate of the k-th
    positive exponential jump family (mean jump size ``1/alpha``); likewise for
    the negative side.  ``mu`` is filled in by :class:`PiecewiseModel` with the
    risk-neutral drift and should normally be left as ``None``.
    """

    duration: float
    sigma: float
    pi_plus: tuple[float, ...] = ()
    alpha_plus: tuple[float, ...] = ()
    pi_minus: tuple[float, ...] = ()
    alpha_minus: tuple[float, ...] = ()
    mu: float | None = None

    def __post_init__(self):
        for name in ("pi_plus", "alpha_plus", "pi_minus", "alpha_minus"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)) if len(getattr(self, name)) else ())
        object.__setattr__(self, "duration", float(self.duration))
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.mu is not None:
            object.__setattr__(self, "mu", float(self.mu))

    @property
    def n_plus(self) -> int:
        return len(self.pi_plus)

    @property
    def n_minus(self) -> int:
        return len(self.pi_minus)

    @property
    def lambda_plus(self) -> float:
        return float(sum(self.pi_plus))

    @property
    def lambda_minus(self) -> float:
        return float(sum(self.pi_minus))


@dataclass(frozen=True)
class PiecewiseModel:
    """A sequence of :class:`ModelPeriod` plus rates and spot.

    Every period's drift is set to the risk-neutral value, so that
    ``Psi_i(-i) = r - d`` on each period.  A period carrying a different
    explicit drift is rejected.
    """

    periods: tuple[ModelPeriod, ...]
    r: float
    d: float = 0.0
    spot: float = 1.0

    def __post_init__(self):
        periods = []
        for p in self.periods:
            try:
                drift = risk_neutral_drift(p, self.r, self.d)
            except DomainError:
                drift = math.nan
            if p.mu is not None and not (math.isnan(drift) or abs(p.mu - drift) <= 1e-12 * max(1.0, abs(drift))):
                raise ModelError(
                    f"user-supplied drift {p.mu!r} differs from the risk-neutral drift {drift!r}"
                )
            periods.append(replace(p, mu=drift))
        object.__setattr__(self, "periods", tuple(periods))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "spot", float(self.spot))

    @property
    def N(self) -> int:
        return len(self.periods)

    @property
    def n_plus(self) -> int:
        return self.periods[0].n_plus if self.periods else 0

    @property
    def n_minus(self) -> int:
        return self.periods[0].n_minus if self.periods else 0

    @property
    def durations(self) -> np.ndarray:
        return np.array([p.duration for p in self.periods])

    @property
    def maturities(self) -> np.ndarray:
        """Cumulative maturities ``T_i``."""
        return np.cumsum(self.durations)

    def with_spot(self, spot: float) -> "PiecewiseModel":
        return replace(self, spot=spot)

    def with_periods(self, periods: Sequence[ModelPeriod]) -> "PiecewiseModel":
        return PiecewiseModel(tuple(replace(p, mu=None) for p in periods), self.r, self.d, self.spot)

    def truncated(self, i: int) -> "PiecewiseModel":
        """The model restricted to its first ``i`` periods."""
        return self.with_periods(self.periods[:i])


def validate_model(m: PiecewiseModel) -> list[str]:
    """Return the list of violated invariants (empty when the model is valid)."""
    out = []
    if m.N < 1:
        return ["model needs at least one period"]
    if not m.spot > 0:
        out.append("spot must be positive")
    n_plus, n_minus = m.n_plus, m.n_minus
    for i, p in enumerate(m.periods, start=1):
        tag = f"period {i}: "
        if not p.duration > 0:
            out.append(tag + "duration must be positive")
        if not p.sigma > 0:
            out.append(tag + "sigma must be positive")
        if len(p.alpha_plus) != p.n_plus or len(p.alpha_minus) != p.n_minus:
            out.append(tag + "each jump family needs one intensity and one rate")
        if p.n_plus != n_plus or p.n_minus != n_minus:
            out.append(tag + f"expected {n_plus} positive and {n_minus} negative jump families")
        if any(v < 0 for v in p.pi_plus + p.pi_minus):
            out.append(tag + "jump intensities must be non-negative")
        if any(a <= ALPHA_PLUS_MIN for a in p.alpha_plus):
            out.append(tag + "positive jump rates must exceed 1 (finite exponential moment)")
        if any(a <= 0 for a in p.alpha_minus):
            out.append(tag + "negative jump rates must be positive")
        for rates in (p.alpha_plus, p.alpha_minus):
            a = np.sort(np.asarray(rates))
            if a.size > 1 and np.min(np.diff(a)) <= RATE_SEPARATION:
                out.append(tag + "duplicate jump rates")
                break
        if not all(math.isfinite(v) for v in (p.duration, p.sigma) + p.pi_plus + p.pi_minus):
            out.append(tag + "parameters must be finite")
    return out


def ensure_valid(m: PiecewiseModel) -> PiecewiseModel:
    problems = validate_model(m)
    if problems:
        raise ModelError(problems)
    return m


def risk_neutral_drift(period: ModelPeriod, r: float, d: float) -> float:
    """Drift making ``exp(X_t - (r - d) t)`` a martingale on the period.

    The jump part is finite-activity, so the ``e^x - 1`` integral against the
    hyper-exponential density is available in closed form.
    """
    if any(a <= 1.0 for a in period.alpha_plus):
        raise DomainError("positive jump rates must exceed 1: E[exp(X_t)] is infinite")
    jumps = sum(p / (a - 1.0) for p, a in zip(period.pi_plus, period.alpha_plus))
    jumps -= sum(p / (a + 1.0) for p, a in zip(period.pi_minus, period.alpha_minus))
    return r - d - 0.5 * period.sigma**2 - jumps


def char_exponent(period: ModelPeriod, u):
    """Characteristic exponent of the increment over one unit of time.

    ``E[exp(i u (X_{t+1} - X_t))] = exp(char_exponent(period, u))`` for ``t``
    inside the period.  Vectorised over ``u``.
    """
    if period.mu is None:
        raise DomainError("period has no drift; build it through PiecewiseModel")
    u = np.asarray(u, dtype=complex)
    iu = 1j * u
    out = period.mu * iu - 0.5 * period.sigma**2 * u**2
    for p, a in zip(period.pi_plus, period.alpha_plus):
        den = a - iu
        if np.any(den == 0):
            raise DomainError(f"u hits the pole -i*{a}")
        out = out + p * iu / den
    for p, a in zip(period.pi_minus, period.alpha_minus):
        den = a + iu
        if np.any(den == 0):
            raise DomainError(f"u hits the pole i*{a}")
        out = out - p * iu / den
    return out if out.ndim else complex(out)


def laplace_exponent(period: ModelPeriod, s):
    """``psi(s) = log E[exp(s X_1)] = char_exponent(period, -i s)``."""
    return char_exponent(period, -1j * np.asarray(s, dtype=complex))


def laplace_exponent_derivative(period: ModelPeriod, s):
    s = np.asarray(s, dtype=complex)
    out = period.mu + period.sigma**2 * s
    for p, a in zip(period.pi_plus, period.alpha_plus):
        out = out + p * a / (a - s) ** 2
    for p, a in zip(period.pi_minus, period.alpha_minus):
        out = out - p * a / (a + s) ** 2
    return out


def char_function_cumulative(m: PiecewiseModel, i: int, u):
    """Characteristic function of ``X_{T_i}`` (``i`` is 1-based)."""
    if not 1 <= i <= m.N:
        raise DomainError(f"maturity index {i} outside 1..{m.N}")
    u = np.asarray(u, dtype=complex)
    total = np.zeros_like(u)
    for p in m.periods[:i]:
        total = total + p.duration * char_exponent(p, u)
    out = np.exp(total)
    return out if out.ndim else complex(out)


def levy_density(period: ModelPeriod, x):
    """Levy density of the jump part at ``x != 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise DomainError("the Levy density is not defined at 0")
    pos = np.zeros_like(x)
    neg = np.zeros_like(x)
    for p, a in zip(period.pi_plus, period.alpha_plus):
        pos = pos + p * a * np.exp(-a * np.abs(x))
    for p, a in zip(period.pi_minus, period.alpha_minus):
        neg = neg + p * a * np.exp(-a * np.abs(x))
    out = np.where(x > 0, pos, neg)
    return out if out.ndim else float(out)


# --- model files -----------------------------------------------------------

def model_to_dict(m: PiecewiseModel) -> dict:
    first = m.periods[0]
    return {
        "r": m.r,
        "d": m.d,
        "spot": m.spot,
        "n_plus": m.n_plus,
        "n_minus": m.n_minus,
        "alpha_plus": list(first.alpha_plus),
        "alpha_minus": list(first.alpha_minus),
        "periods": [
            {"duration": p.duration, "sigma": p.sigma, "pi_plus": list(p.pi_plus), "pi_minus": list(p.pi_minus)}
            for p in m.periods
        ],
    }


def model_from_dict(data: dict) -> PiecewiseModel:
    try:
        alpha_plus = tuple(data.get("alpha_plus", ()))
        alpha_minus = tuple(data.get("alpha_minus", ()))
        n_plus = int(data.get("n_plus", len(alpha_plus)))
        n_minus = int(data.get("n_minus", len(alpha_minus)))
        if len(alpha_plus) != n_plus or len(alpha_minus) != n_minus:
            raise ModelError("alpha lists do not match n_plus/n_minus")
        periods = []
        for rec in data["periods"]:
            periods.append(
                ModelPeriod(
                    duration=rec["duration"],
                    sigma=rec["sigma"],
                    pi_plus=tuple(rec.get("pi_plus", ())),
                    alpha_plus=alpha_plus,
                    pi_minus=tuple(rec.get("pi_minus", ())),
                    alpha_minus=alpha_minus,
                )
            )
        return PiecewiseModel(tuple(periods), r=data["r"], d=data.get("d", 0.0), spot=data.get("spot", 1.0))
    except KeyError as exc:
        raise ModelError(f"model file is missing field {exc.args[0]!r}") from None


def load_model(path) -> PiecewiseModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def save_model(m: PiecewiseModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m), indent=2) + "\n", encoding="utf-8")


PERIOD_FIT_ROWS = (
    (0.5, 0.0995, 0.0371, 11.1819),
    (0.5, 0.0759, 0.2091, 9.9540),
    (2.0, 0.0786, 0.4738, 7.0322),
    (2.0, 0.0858, 0.8084, 0.2361),
)
LEVY_FIT_ROW = (0.1171, 0.5693, 0.0165)
FIT_ALPHA_MINUS = (3.0, 10.0)


def _published_rates(coefs, alphas, convention: str) -> tuple[float, ...]:
    """Arrival rates from published jump coefficients.

    ``"density"`` reads each coefficient ``c`` as the Levy density
    ``c exp(-alpha |x|)``, i.e. arrival rate ``c / alpha``; this is the reading
    under which the published barrier prices are reproduced.  ``"rate"``
    takes the coefficients as arrival rates.
    """
    if convention == "density":
        return tuple(c / a for c, a in zip(coefs, alphas))
    if convention == "rate":
        return tuple(coefs)
    raise ValueError(f"unknown convention {convention!r}")


def eurostoxx_model(spot: float = 4150.0, convention: str = "density") -> PiecewiseModel:
    """The four-period Eurostoxx fit (negative jumps with rates 3 and 10)."""
    periods = tuple(
        ModelPeriod(
            duration=t,
            sigma=s,
            pi_minus=_published_rates((p1, p2), FIT_ALPHA_MINUS, convention),
            alpha_minus=FIT_ALPHA_MINUS,
        )
        for t, s, p1, p2 in PERIOD_FIT_ROWS
    )
    return PiecewiseModel(periods, r=0.03, d=0.0, spot=spot)


def eurostoxx_levy_model(
    spot: float = 4150.0, durations=(0.5, 0.5, 2.0, 2.0), convention: str = "density"
) -> PiecewiseModel:
    """The constant-parameter fit, split over the given schedule."""
    s, p1, p2 = LEVY_FIT_ROW
    rates = _published_rates((p1, p2), FIT_ALPHA_MINUS, convention)
    periods = tuple(
        ModelPeriod(duration=t, sigma=s, pi_minus=rates, alpha_minus=FIT_ALPHA_MINUS) for t in durations
    )
    return PiecewiseModel(periods, r=0.03, d=0.0, spot=spot)
