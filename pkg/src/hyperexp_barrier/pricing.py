"""Down-and-in digital and down-and-in call options by transform inversion.

Prices are inverted from their Laplace transforms in the period lengths
``(T^(1), ..., T^(N))``.  Discounting at rate ``r`` is folded into the
transform by evaluating the factorisation at ``q + r``; no other discount
factor is applied.

With ``L = log S0`` and ``x = log(S0/H) > 0`` the digital transform is
``e1' exp(Q_minus x) 1 / c(q)``, so derivatives in ``L`` bring down powers
of ``Q_minus``.  The same holds for the call: in its Laplace-Fourier
transform the spot enters only through ``x`` once the log-strike kernel is
accounted for.  Delta and gamma follow from ``d/dS = (1/S) d/dL`` and
``d2/dS2 = (1/S^2)(d2/dL2 - d/dL)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError
from .model import PiecewiseModel, ensure_valid, laplace_exponent
from .transforms import DEFAULT_DAMPING, FrfftPlan, carr_madan_call, interpolate_log_strike, talbot_nodes
from .wiener_hopf import HOMOTOPY_STEPS, SpectralBatch, moment_strip, spectral_batch

DID = "down-and-in digital"
DIC = "down-and-in call"
DEFAULT_M_DIGITAL = 6
DEFAULT_M_CALL = 7


@dataclass(frozen=True)
class BarrierContract:
    """Down-type barrier contract; the maturity schedule is the model's."""

    kind: str
    barrier: float
    strike: float | None = None
    schedule: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in (DID, DIC):
            raise DomainError(f"unknown contract kind {self.kind!r}")
        if self.kind == DIC and (self.strike is None or self.strike <= 0):
            raise DomainError("a down-and-in call needs a positive strike")
        if not self.barrier > 0:
            raise DomainError("barrier must be positive")

    def log_barrier(self, m: PiecewiseModel) -> float:
        h = float(np.log(self.barrier / m.spot))
        if not h < 0:
            raise DomainError("down-type barrier must lie below the spot")
        return h

    def check_schedule(self, m: PiecewiseModel) -> np.ndarray:
        T = m.durations
        if self.schedule is not None and not np.allclose(self.schedule, T, rtol=0, atol=1e-12):
            raise DomainError(f"contract schedule {self.schedule} differs from the model periods {tuple(T)}")
        return T


@dataclass(frozen=True)
class PriceAndGreeks:
    price: float
    delta: float | None = None
    gamma: float | None = None
    method: str = "transform"
    params: dict = field(default_factory=dict)
    ci: tuple[float, float] | None = None


def discount_product(m: PiecewiseModel, q) -> np.ndarray:
    """``c(q) = prod_i (q_i + r)``."""
    return np.prod(np.asarray(q) + m.r, axis=-1)


def _infimum(m: PiecewiseModel, q_nodes, steps: int) -> SpectralBatch:
    return spectral_batch(m, np.asarray(q_nodes) + m.r, "-", steps)


def _call_moments(m: PiecewiseModel, p: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``[K(b)^{-1} K(0) 1]`` on the infimum ladder states.

    The diffusion entries are ``prod_{l >= j} p_l / (p_l - psi_l(b))``
    (the transform of ``e^{b X}`` over the remaining exponential periods),
    a negative-jump state of rate ``alpha`` adds the factor
    ``alpha / (alpha + b)``.  ``p`` has shape ``(n, N)``, ``b`` shape
    ``(k,)``; the result has shape ``(n, N(1+n^-), k)``.
    """
    N, nmi = m.N, m.n_minus
    f = np.empty((p.shape[0], N, b.size), dtype=complex)
    acc = np.ones((p.shape[0], b.size), dtype=complex)
    for j in range(N - 1, -1, -1):
        pj = p[:, j][:, None]
        acc = acc * pj / (pj - laplace_exponent(m.periods[j], b)[None, :])
        f[:, j] = acc
    out = np.empty((p.shape[0], N * (1 + nmi), b.size), dtype=complex)
    out[:, :N] = f
    for j, per in enumerate(m.periods):
        for k, al in enumerate(per.alpha_minus):
            out[:, N + j * nmi + k] = al / (al + b)[None, :] * f[:, j]
    return out


# --- down-and-in digital -----------------------------------------------------

def did_transform(m: PiecewiseModel, contract: BarrierContract, q, steps: int = HOMOTOPY_STEPS) -> complex:
    """``e1' exp(Q_minus x) 1 / c(q)`` at one vector ``q`` (``x = -h``)."""
    ensure_valid(m)
    x = -contract.log_barrier(m)
    q = np.atleast_2d(np.asarray(q, dtype=complex))
    sb = _infimum(m, q, steps)
    val = sb.first_row_weights(np.ones((1, sb.U.shape[-1])), 0, x)
    return complex(val[0] / discount_product(m, q[0]))


def did_curve(
    m: PiecewiseModel,
    barrier: float,
    spots,
    M: int = DEFAULT_M_DIGITAL,
    greeks: bool = True,
    steps: int = HOMOTOPY_STEPS,
) -> list[PriceAndGreeks]:
    """Digital prices (and Greeks) for several spots with a fixed barrier.

    The factorisation does not depend on the spot, so it is computed once
    per Talbot node and reused for every spot.
    """
    ensure_valid(m)
    T = m.durations
    nodes = talbot_nodes(T, M, real=True)
    sb = _infimum(m, nodes.points, steps)
    c = discount_product(m, nodes.points)
    ones = np.ones((nodes.points.shape[0], sb.U.shape[-1]))
    out = []
    for S in np.atleast_1d(spots):
        S = float(S)
        x = -BarrierContract(DID, barrier).log_barrier(m.with_spot(S))
        vals = [nodes.reduce(sb.first_row_weights(ones, p, x) / c) for p in ((0, 1, 2) if greeks else (0,))]
        price = float(vals[0])
        delta = gamma = None
        if greeks:
            delta = float(vals[1] / S)
            gamma = float((vals[2] - vals[1]) / S**2)
        out.append(PriceAndGreeks(price, delta, gamma, "transform", {"M": M, "spot": S, "barrier": barrier}))
    return out


def did_price(m: PiecewiseModel, contract: BarrierContract, M: int = DEFAULT_M_DIGITAL) -> PriceAndGreeks:
    contract.check_schedule(m)
    contract.log_barrier(m)
    res = did_curve(m, contract.barrier, [m.spot], M, greeks=False)[0]
    return res


def did_greeks(m: PiecewiseModel, contract: BarrierContract, M: int = DEFAULT_M_DIGITAL) -> PriceAndGreeks:
    contract.check_schedule(m)
    contract.log_barrier(m)
    return did_curve(m, contract.barrier, [m.spot], M, greeks=True)[0]


# --- down-and-in call -----------------------------------------------------------

def _check_strip(m: PiecewiseModel, alpha: float) -> None:
    lo, hi = moment_strip(m)
    if not lo < alpha + 1.0 < hi:
        raise DomainError(f"Re(b)={alpha + 1.0} outside the moment strip ({lo}, {hi})")


def dic_transform(
    m: PiecewiseModel,
    contract: BarrierContract,
    v,
    q,
    alpha: float = DEFAULT_DAMPING,
    steps: int = HOMOTOPY_STEPS,
) -> complex:
    """Laplace transform in the period lengths of the log-strike Fourier
    transform of the damped call, at frequency ``v``:

    ``S0 e^{b h} / (c(q) b (b - 1)) * e1' exp(Q_minus x) [K(b)^{-1} K(0) 1]``

    with ``b = alpha + 1 + i v``, ``h = log(H/S0)`` and ``x = -h``.
    """
    ensure_valid(m)
    _check_strip(m, alpha)
    h = contract.log_barrier(m)
    q = np.atleast_2d(np.asarray(q, dtype=complex))
    b = np.atleast_1d(alpha + 1.0 + 1j * np.asarray(v, dtype=float))
    sb = _infimum(m, q, steps)
    w = _call_moments(m, q + m.r, b)
    val = sb.first_row_weights(w, 0, -h)[0]
    out = m.spot * np.exp(b * h) * val / (discount_product(m, q[0]) * b * (b - 1.0))
    return complex(out[0]) if np.ndim(v) == 0 else out


@dataclass(frozen=True)
class CallGrid:
    """Down-and-in call prices and Greeks on the FrFFT log-strike grid."""

    log_strikes: np.ndarray
    strikes: np.ndarray
    price: np.ndarray
    delta: np.ndarray | None
    gamma: np.ndarray | None
    params: dict

    def at(self, strikes) -> list[PriceAndGreeks]:
        """Values at arbitrary strikes.

        A strike on the grid (to 1e-9 of the spacing) takes the grid value,
        other strikes are interpolated monotonically in log-strike.
        """
        k = np.log(np.atleast_1d(np.asarray(strikes, dtype=float)) / self.params["spot"])
        lo, hi = self.log_strikes[0], self.log_strikes[-1]
        if np.any((k < lo) | (k > hi)):
            raise DomainError("strike outside the FrFFT log-strike window")
        lam = self.log_strikes[1] - self.log_strikes[0]
        pos = (k - lo) / lam
        near = np.abs(pos - np.round(pos)) < 1e-9
        out = []
        series = [self.price, self.delta, self.gamma]
        vals = []
        for arr in series:
            if arr is None:
                vals.append([None] * k.size)
                continue
            interp = interpolate_log_strike(self.log_strikes, arr, k)
            snapped = arr[np.clip(np.round(pos).astype(int), 0, arr.size - 1)]
            vals.append(np.where(near, snapped, interp))
        for j in range(k.size):
            meta = dict(self.params, strike=float(np.exp(k[j]) * self.params["spot"]), on_grid=bool(near[j]))
            d = None if vals[1][j] is None else float(vals[1][j])
            g = None if vals[2][j] is None else float(vals[2][j])
            out.append(PriceAndGreeks(float(vals[0][j]), d, g, "transform", meta))
        return out


def dic_price_grid(
    m: PiecewiseModel,
    barrier: float,
    M: int = DEFAULT_M_CALL,
    plan: FrfftPlan | None = None,
    greeks: bool = True,
    steps: int = HOMOTOPY_STEPS,
) -> CallGrid:
    """Down-and-in call prices on the FrFFT log-strike grid.

    For every frequency ``v_j = delta*j`` the time-Laplace transform is
    inverted by complex Talbot summation over all conjugation patterns; the
    strike inversion is then one fractional FFT per output series.
    """
    ensure_valid(m)
    plan = plan or FrfftPlan()
    _check_strip(m, plan.alpha)
    h = BarrierContract(DIC, barrier, strike=1.0).log_barrier(m)
    nodes = talbot_nodes(m.durations, M, real=False)
    sb = _infimum(m, nodes.points, steps)
    b = plan.alpha + 1.0 + 1j * plan.frequencies
    w = _call_moments(m, nodes.points + m.r, b)
    c = discount_product(m, nodes.points)[:, None]
    pre = m.spot * np.exp(b * h) / (b * (b - 1.0))
    series = []
    for p in ((0, 1, 2) if greeks else (0,)):
        F = nodes.reduce(sb.first_row_weights(w, p, -h) / c) * pre
        series.append(plan.invert(F))
    S = m.spot
    price = series[0]
    delta = gamma = None
    if greeks:
        delta = series[1] / S
        gamma = (series[2] - series[1]) / S**2
    params = {"M": M, "N": plan.N, "delta": plan.delta, "alpha": plan.alpha, "x0": plan.x0, "spot": S, "barrier": barrier}
    return CallGrid(plan.log_strikes, S * np.exp(plan.log_strikes), price, delta, gamma, params)


def dic_prices(
    m: PiecewiseModel,
    barrier: float,
    strikes,
    M: int = DEFAULT_M_CALL,
    plan: FrfftPlan | None = None,
    greeks: bool = True,
) -> list[PriceAndGreeks]:
    return dic_price_grid(m, barrier, M, plan, greeks).at(strikes)


def dic_greeks(
    m: PiecewiseModel,
    contract: BarrierContract,
    M: int = DEFAULT_M_CALL,
    plan: FrfftPlan | None = None,
    method: str = "analytic",
    bump: float = 1e-3,
) -> PriceAndGreeks:
    """Delta and gamma of one down-and-in call.

    ``method="fd"`` replaces the analytic transforms by central differences
    of the semi-analytic price in the spot.
    """
    contract.check_schedule(m)
    if contract.kind != DIC:
        raise DomainError("dic_greeks needs a down-and-in call")
    if method == "analytic":
        return dic_prices(m, contract.barrier, [contract.strike], M, plan)[0]
    if method != "fd":
        raise DomainError(f"unknown method {method!r}")
    S = m.spot
    vals = [
        dic_prices(m.with_spot(S * f), contract.barrier, [contract.strike], M, plan, greeks=False)[0].price
        for f in (1 - bump, 1.0, 1 + bump)
    ]
    dS = S * bump
    delta = (vals[2] - vals[0]) / (2 * dS)
    gamma = (vals[2] - 2 * vals[1] + vals[0]) / dS**2
    return PriceAndGreeks(vals[1], delta, gamma, "finite-difference", {"M": M, "bump": bump})


def european_call(m: PiecewiseModel, i: int, strike, alpha: float = DEFAULT_DAMPING):
    """European call with maturity ``T_i`` (1-based) by damped Fourier inversion."""
    out = carr_madan_call(m, i, strike, alpha=alpha, method="quad")
    return float(out[0]) if np.ndim(strike) == 0 else out
