import math

import numpy as np
import pytest
from numpy.polynomial import Polynomial as P
from scipy import integrate
from scipy.stats import norm

from helpers import black_scholes_call, brownian_model, reflection_did
from hyperexp_barrier.exceptions import DomainError
from hyperexp_barrier.model import ModelPeriod, PiecewiseModel, eurostoxx_model
from hyperexp_barrier.pricing import (
    DIC,
    DID,
    BarrierContract,
    dic_greeks,
    dic_price_grid,
    dic_prices,
    dic_transform,
    did_curve,
    did_greeks,
    did_price,
    did_transform,
    european_call,
)
from hyperexp_barrier.transforms import FrfftPlan, carr_madan_call, talbot_invert


def test_contract_validation():
    with pytest.raises(DomainError):
        BarrierContract("up-and-out", 90.0)
    with pytest.raises(DomainError):
        BarrierContract(DIC, 90.0)
    with pytest.raises(DomainError):
        BarrierContract(DID, -1.0)
    m = brownian_model(0.2, 0.03, 1.0, spot=100.0)
    with pytest.raises(DomainError):
        BarrierContract(DID, 100.0).log_barrier(m)
    with pytest.raises(DomainError):
        did_price(m, BarrierContract(DID, 90.0, schedule=(0.5, 0.5)))
    assert BarrierContract(DID, 90.0).log_barrier(m) == pytest.approx(math.log(0.9))


@pytest.mark.parametrize(
    "sigma,r,H,T",
    [(0.2, 0.03, 90.0, 1.0), (0.35, 0.0, 70.0, 2.5), (0.1, 0.08, 97.0, 0.3)],
)
def test_brownian_did_reflection(sigma, r, H, T):
    m = brownian_model(sigma, r, T, spot=100.0)
    got = did_price(m, BarrierContract(DID, H), M=10).price
    assert got == pytest.approx(reflection_did(100.0, H, sigma, m.periods[0].mu, T, r), abs=1e-6)


def test_two_period_brownian_did_against_quadrature():
    r, S, H = 0.03, 100.0, 90.0
    (s1, T1), (s2, T2) = (0.2, 0.5), (0.35, 0.7)
    m = PiecewiseModel((ModelPeriod(T1, s1), ModelPeriod(T2, s2)), r=r, spot=S)
    m1, m2 = (p.mu for p in m.periods)
    h = math.log(H / S)

    def hit(mu, sig, level, T):
        st = sig * math.sqrt(T)
        return norm.cdf((level - mu * T) / st) + math.exp(2 * mu * level / sig**2) * norm.cdf((level + mu * T) / st)

    def alive_density(y):
        st = s1 * math.sqrt(T1)
        img = math.exp(2 * m1 * h / s1**2) * norm.pdf((y - 2 * h - m1 * T1) / st)
        return (norm.pdf((y - m1 * T1) / st) - img) / st

    later, _ = integrate.quad(lambda y: alive_density(y) * hit(m2, s2, h - y, T2), h, 5.0, epsabs=1e-13)
    want = math.exp(-r * (T1 + T2)) * (hit(m1, s1, h, T1) + later)
    assert did_price(m, BarrierContract(DID, H), M=10).price == pytest.approx(want, abs=1e-6)


def test_default_precision_error_is_small():
    # M = 6 trades accuracy for speed: about 1e-5 on a Brownian digital
    m = brownian_model(0.2, 0.03, 1.0, spot=100.0)
    want = reflection_did(100.0, 90.0, 0.2, m.periods[0].mu, 1.0, 0.03)
    assert did_price(m, BarrierContract(DID, 90.0)).price == pytest.approx(want, abs=5e-5)


def kou_did(period, r, x, T, M):
    """Independent single-period digital for one positive and one negative
    exponential family: closed-form passage-time transform, roots from the
    quartic numerator."""
    mu, s2 = period.mu, period.sigma**2
    (lp,), (ap,) = period.pi_plus, period.alpha_plus
    (lm,), (am,) = period.pi_minus, period.alpha_minus
    D = P([ap, -1.0]) * P([am, 1.0])
    base = P([0.0, mu, 0.5 * s2]) * D + lp * P([0.0, 1.0]) * P([am, 1.0]) - lm * P([0.0, 1.0]) * P([ap, -1.0])

    def fhat(q):
        out = []
        for qq in q[:, 0] + r:
            roots = (base - qq * D).roots()
            b1, b2 = -roots[roots.real < 0]
            lt = (am - b1) / am * b2 / (b2 - b1) * np.exp(-b1 * x) + (b2 - am) / am * b1 / (b2 - b1) * np.exp(-b2 * x)
            out.append(lt / qq)
        return np.array(out)

    return talbot_invert(fhat, [T], M=M)


def test_kou_did_matches_scalar_oracle():
    p = ModelPeriod(1.5, 0.18, (0.8,), (6.0,), (1.4,), (4.0,))
    m = PiecewiseModel((p,), r=0.04, spot=100.0)
    for H in (80.0, 95.0):
        want = kou_did(m.periods[0], m.r, -math.log(H / 100.0), 1.5, M=10)
        assert did_price(m, BarrierContract(DID, H), M=10).price == pytest.approx(want, abs=1e-6)


def test_did_bounds_and_monotonicity():
    m = eurostoxx_model()
    T = m.maturities[-1]
    spots = np.linspace(3750, 5000, 12)
    res = did_curve(m, 0.9 * 4150, spots, greeks=False)
    prices = np.array([x.price for x in res])
    assert np.all((prices >= 0) & (prices <= math.exp(-m.r * T)))
    assert np.all(np.diff(prices) < 0)
    near = did_curve(m, 0.9 * 4150, [0.9 * 4150 * (1 + 1e-9)], M=10, greeks=False)[0].price
    assert near == pytest.approx(math.exp(-m.r * T), abs=1e-6)


def test_did_transform_matches_curve_node():
    m = eurostoxx_model().truncated(2)
    c = BarrierContract(DID, 0.9 * 4150)
    q = np.array([1.0 + 2.0j, 0.7 - 0.5j])
    val = did_transform(m, c, q)
    assert np.isfinite(val)
    # the transform of a quantity in [0, 1] is bounded by 1 / |c(q)| for Re q > 0
    assert abs(val) <= 1 / abs(np.prod(q + m.r)) + 1e-12


def test_did_greeks_against_finite_differences():
    m, H = eurostoxx_model(), 0.9 * 4150
    for spot in (3900.0, 4150.0, 4700.0):
        g = did_greeks(m.with_spot(spot), BarrierContract(DID, H))
        bump = 1e-3 * spot
        up, mid, dn = (x.price for x in did_curve(m, H, [spot + bump, spot, spot - bump], greeks=False))
        assert g.delta == pytest.approx((up - dn) / (2 * bump), rel=1e-2)
        assert g.gamma == pytest.approx((up - 2 * mid + dn) / bump**2, rel=1e-2)


def brownian_dic(S, K, H, T, r, sigma):
    """Closed-form down-and-in call for geometric Brownian motion."""
    st = sigma * math.sqrt(T)
    lam = (r + 0.5 * sigma**2) / sigma**2
    if H <= K:
        y = math.log(H * H / (S * K)) / st + lam * st
        return S * (H / S) ** (2 * lam) * norm.cdf(y) - K * math.exp(-r * T) * (H / S) ** (2 * lam - 2) * norm.cdf(y - st)
    x1 = math.log(S / H) / st + lam * st
    y1 = math.log(H / S) / st + lam * st
    out = S * norm.cdf(x1) - K * math.exp(-r * T) * norm.cdf(x1 - st)
    out -= S * (H / S) ** (2 * lam) * norm.cdf(y1) - K * math.exp(-r * T) * (H / S) ** (2 * lam - 2) * norm.cdf(y1 - st)
    return black_scholes_call(S, K, T, r, sigma) - out


def test_brownian_dic_closed_form():
    S, H, T, r, sigma = 100.0, 90.0, 1.0, 0.03, 0.25
    m = brownian_model(sigma, r, T, spot=S)
    strikes = [80.0, 90.0, 100.0, 115.0]
    got = dic_prices(m, H, strikes, M=10, plan=FrfftPlan(N=4096, delta=0.1), greeks=False)
    for k, g in zip(strikes, got):
        assert g.price == pytest.approx(brownian_dic(S, k, H, T, r, sigma), abs=1e-4)


def test_dic_transform_matches_grid_inputs():
    m = eurostoxx_model().truncated(2)
    c = BarrierContract(DIC, 0.9 * 4150, strike=4150.0)
    v = np.array([0.0, 1.0, 5.0])
    vals = dic_transform(m, c, v, [1.0 + 1.0j, 0.5])
    assert vals.shape == (3,) and np.all(np.isfinite(vals))
    assert dic_transform(m, c, 1.0, [1.0 + 1.0j, 0.5]) == pytest.approx(vals[1])
    with pytest.raises(DomainError):
        dic_transform(m, c, 0.0, [1.0, 1.0], alpha=-5.0)


def test_dic_bounded_by_european_and_shape():
    m = eurostoxx_model().truncated(2)
    grid = dic_price_grid(m, 0.9 * 4150, greeks=False)
    window = (grid.strikes > 0.6 * 4150) & (grid.strikes < 1.5 * 4150)
    K, price = grid.strikes[window], grid.price[window]
    euro = european_call(m, 2, K)
    # FrFFT round-off is about 1e-5 in currency units
    assert np.all(price <= euro + 1e-5) and np.all(price >= -1e-5)
    slope = np.diff(price) / np.diff(K)
    assert np.all(slope < 1e-6)
    assert np.all(np.diff(slope) > -1e-6)


def test_dic_tends_to_european_as_barrier_reaches_spot():
    m = eurostoxx_model().truncated(2)
    K = [3320.0, 4150.0, 4980.0]
    got = [x.price for x in dic_prices(m, 4150 * (1 - 1e-7), K, greeks=False)]
    np.testing.assert_allclose(got, european_call(m, 2, K), rtol=2e-3, atol=1e-3)


def test_strike_mapping_reports_grid_hits():
    m = eurostoxx_model().truncated(2)
    grid = dic_price_grid(m, 0.9 * 4150, greeks=False)
    on, off = grid.at([grid.strikes[512], 4100.0])
    assert on.params["on_grid"] and not off.params["on_grid"]
    assert on.price == grid.price[512]
    with pytest.raises(DomainError):
        grid.at([1.0])


def test_dic_greeks_analytic_vs_fd():
    m = eurostoxx_model().truncated(2)
    for K in (3400.0, 4150.0, 4700.0):
        c = BarrierContract(DIC, 0.9 * 4150, strike=K)
        a = dic_greeks(m, c)
        f = dic_greeks(m, c, method="fd", bump=1e-3)
        assert f.method == "finite-difference"
        assert a.delta == pytest.approx(f.delta, rel=2e-2)
        assert a.gamma == pytest.approx(f.gamma, rel=2e-2)
    with pytest.raises(DomainError):
        dic_greeks(m, c, method="pathwise")
    with pytest.raises(DomainError):
        dic_greeks(m, BarrierContract(DID, 0.9 * 4150))


def test_european_call_scalar_and_vector():
    m = brownian_model(0.2, 0.05, 1.0, spot=100.0)
    assert european_call(m, 1, 100.0) == pytest.approx(black_scholes_call(100.0, 100.0, 1.0, 0.05, 0.2), abs=1e-6)
    np.testing.assert_allclose(european_call(m, 1, [90.0, 110.0]), carr_madan_call(m, 1, [90.0, 110.0]))
