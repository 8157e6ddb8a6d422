import math

import numpy as np
import pytest
from scipy import linalg, optimize

from helpers import random_model, reflection_did
from hyperexp_barrier.exceptions import DomainError
from hyperexp_barrier.model import ModelPeriod, PiecewiseModel, laplace_exponent, eurostoxx_levy_model, eurostoxx_model
from hyperexp_barrier.transforms import talbot_invert
from hyperexp_barrier.wiener_hopf import (
    assemble_factorization,
    build_generator,
    det_k_product,
    find_roots,
    inf_transform,
    joint_transform,
    k_matrix,
    killed_moment,
    ladder_generator_blocks,
    period_roots,
    spectral_batch,
    sup_transform,
)


def _example_model():
    # period 1 carries one positive and one negative family, period 2 is pure diffusion
    return PiecewiseModel(
        (
            ModelPeriod(1.0, 0.2, (0.5,), (4.0,), (0.7,), (3.0,)),
            ModelPeriod(1.0, 0.3, (0.0,), (5.0,), (0.0,), (6.0,)),
        ),
        r=0.02,
    )


def test_generator_matches_worked_example():
    m, q = _example_model(), np.array([1.5, 0.8])
    b = build_generator(m, q)
    lp, lm, ap, am = 0.5, 0.7, 4.0, 3.0
    want = np.array(
        [
            [-q[0] - lp - lm, q[0], lp, lm],
            [0.0, -q[1], 0.0, 0.0],
            [ap, 0.0, -ap, 0.0],
            [am, 0.0, 0.0, -am],
        ]
    )
    # period 2 jump states exist but are unreachable (zero intensity)
    reach = [0, 1, 2, 4]
    np.testing.assert_allclose(b.Q[np.ix_(reach, reach)], want)
    assert np.all(b.Q[np.ix_(reach, [3, 5])] == 0)
    p1, p2 = m.periods
    np.testing.assert_allclose(b.s2_tilde[:3], [p1.sigma**2, p2.sigma**2, 0.0])
    np.testing.assert_allclose(b.v_tilde[[0, 1, 2, 4]], [p1.mu, p2.mu, 1.0, -1.0])


def test_k_matrix_direct_assembly():
    m, q = _example_model(), np.array([1.5, 0.8])
    b = build_generator(m, q)
    np.testing.assert_array_equal(k_matrix(b, 0.0), b.Q)
    s = 1.0
    want = b.Q.astype(complex)
    for j in range(b.dim):
        want[j, j] += 0.5 * s * s * b.s2_tilde[j] + s * b.v_tilde[j]
    np.testing.assert_allclose(k_matrix(b, s), want)


def test_generator_properties_real_q():
    rng = np.random.default_rng(11)
    for _ in range(30):
        m = random_model(rng)
        b = build_generator(m, rng.uniform(0.1, 4.0, m.N))
        off = b.Q - np.diag(np.diag(b.Q))
        assert np.all(off >= 0)
        assert np.all(b.Q.sum(axis=1) <= 1e-12)


def test_single_brownian_generator_is_minus_q():
    m = PiecewiseModel((ModelPeriod(1.0, 0.2),), r=0.03)
    np.testing.assert_array_equal(build_generator(m, [0.7]).Q, [[-0.7]])
    with pytest.raises(DomainError):
        build_generator(m, [0.0])


def test_determinant_identity_with_sign():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m = random_model(rng)
        q = rng.uniform(0.1, 3, m.N) + 1j * rng.uniform(-3, 3, m.N)
        b = build_generator(m, q)
        sign = (-1) ** (m.N * (m.n_plus + m.n_minus))
        for s in rng.normal(scale=4, size=5) + 1j * rng.normal(scale=4, size=5):
            prod = 1.0
            for p, qi in zip(m.periods, q):
                prod *= (laplace_exponent(p, s) - qi) * np.prod([a - s for a in p.alpha_plus])
                prod *= np.prod([a + s for a in p.alpha_minus])
            det = np.linalg.det(k_matrix(b, s))
            assert abs(det - sign * prod) <= 1e-9 * abs(prod)
            assert abs(abs(det) - det_k_product(m, q, s)) <= 1e-9 * abs(det)


def test_brownian_roots_quadratic():
    m = PiecewiseModel((ModelPeriod(1.0, 0.3),), r=0.05)
    mu, s2, q = m.periods[0].mu, 0.09, 0.8
    rp, rm = find_roots(m, [q])
    disc = math.sqrt(mu**2 + 2 * s2 * q)
    assert rp[0] == pytest.approx((-mu + disc) / s2, rel=1e-13)
    assert rm[0] == pytest.approx((-mu - disc) / s2, rel=1e-13)


def test_kou_roots_interlace():
    p = ModelPeriod(1.0, 0.2, (1.0,), (5.0,), (2.0,), (4.0,))
    m = PiecewiseModel((p,), r=0.03)
    rp, rm = find_roots(m, [0.6])
    assert rp.size == 2 and rm.size == 2
    assert 0 < rp[0] < 5.0 < rp[1]
    assert rm[1] < -4.0 < rm[0] < 0


def test_fitted_period_roots_against_bisection():
    m = eurostoxx_model().truncated(1)
    p, q = m.periods[0], 0.9

    def g(s):
        return laplace_exponent(p, s).real - q

    want = [
        optimize.brentq(g, -10 + 1e-9, -3 - 1e-9),
        optimize.brentq(g, -3 + 1e-9, -1e-12),
        optimize.brentq(g, -60.0, -10 - 1e-9),
    ]
    rp, rm = find_roots(m, [q])
    assert rp.size == 1 and rp[0] > 0
    assert rm[2] < -10 < rm[1] < -3 < rm[0] < 0
    np.testing.assert_allclose(sorted(rm), sorted(want), rtol=1e-10)


def test_complex_q_root_counts_and_residuals():
    rng = np.random.default_rng(2)
    for _ in range(20):
        m = random_model(rng)
        q = rng.uniform(0.1, 5, m.N) + 1j * rng.uniform(-20, 20, m.N)
        rp, rm = find_roots(m, q)
        assert rp.size == m.N * (1 + m.n_plus) and rm.size == m.N * (1 + m.n_minus)
        assert np.all(rp.real > 0) and np.all(rm.real < 0)
        for i, p in enumerate(m.periods):
            for s in np.r_[rp[i * (1 + m.n_plus):(i + 1) * (1 + m.n_plus)], rm[i * (1 + m.n_minus):(i + 1) * (1 + m.n_minus)]]:
                assert abs(laplace_exponent(p, s) - q[i]) < 1e-9 * (1 + abs(q[i]))


def test_idle_family_root_sits_on_its_pole():
    p = ModelPeriod(1.0, 0.2, pi_minus=(0.0, 0.5), alpha_minus=(3.0, 10.0))
    pos, neg = period_roots(PiecewiseModel((p,), 0.03).periods[0], 0.5)
    assert -3.0 in neg and neg.size == 3


def test_brownian_factor_is_scalar_root():
    m = PiecewiseModel((ModelPeriod(1.0, 0.25),), r=0.04)
    f = assemble_factorization(m, [0.9])
    rp, rm = find_roots(m, [0.9])
    np.testing.assert_allclose(f.Q_plus, [[-rp[0]]])
    np.testing.assert_allclose(f.Q_minus, [[rm[0]]])
    assert f.eta_plus.size == 0 and f.eta_minus.size == 0


def test_factorization_random_real_q():
    rng = np.random.default_rng(8)
    for _ in range(30):
        m = random_model(rng)
        f = assemble_factorization(m, rng.uniform(0.1, 4, m.N))
        assert max(f.residual_plus + f.residual_minus) < 1e-8
        for Qs in (f.Q_plus, f.Q_minus):
            off = Qs - np.diag(np.diag(Qs))
            assert np.all(off >= -1e-10)
            assert np.all(Qs.sum(axis=1) <= 1e-10)
        for eta in (f.eta_plus, f.eta_minus):
            if eta.size:
                assert np.all(eta >= 0) and np.all(eta.sum(axis=1) <= 1 + 1e-10)


def test_spectral_exponential_matches_expm():
    rng = np.random.default_rng(9)
    for _ in range(20):
        m = random_model(rng)
        f = assemble_factorization(m, rng.uniform(0.1, 4, m.N) + 1j * rng.uniform(-4, 4, m.N))
        for side in ("+", "-"):
            U, lam, Qs = f.ladder(side)
            x = float(rng.uniform(0.01, 0.5))
            spectral = (U * np.exp(lam * x)) @ np.linalg.inv(U)
            direct = linalg.expm(Qs * x)
            assert np.linalg.norm(spectral - direct) <= 1e-9 * np.linalg.norm(direct)


def test_block_generator_matches_spectral():
    rng = np.random.default_rng(4)
    for _ in range(10):
        m = random_model(rng, max_periods=3)
        q = rng.uniform(0.2, 4, (3, m.N)) + 1j * rng.uniform(-4, 4, (3, m.N))
        for side in ("+", "-"):
            sb = spectral_batch(m, q, side)
            spectral = (sb.U * sb.eigenvalues[:, None, :]) @ np.linalg.inv(sb.U)
            blocks = ladder_generator_blocks(m, sb.q, sb.rho, side)
            np.testing.assert_allclose(blocks, spectral, atol=1e-9 * np.abs(spectral).max())


def test_coincident_roots_across_periods():
    # identical periods and equal q: every root has multiplicity N
    m = eurostoxx_levy_model(durations=(0.5, 0.5, 0.5))
    f = assemble_factorization(m, [0.7, 0.7, 0.7])
    assert max(f.residual_plus + f.residual_minus) < 1e-8
    assert np.all(f.eta_minus.sum(axis=1) <= 1 + 1e-10)
    single = assemble_factorization(m.truncated(1), [0.7])
    # one randomised period in the chain: first passage of the first period alone
    x = 0.1
    assert f.expm("-", x)[0, 0] == pytest.approx(single.expm("-", x)[0, 0], rel=1e-12)


def test_sup_transform_limits_and_monotonicity():
    m = eurostoxx_model().truncated(2)
    q = np.array([0.8, 1.3])
    f = assemble_factorization(m, q)
    assert abs(sup_transform(f, 1e-12)) < 1e-9
    assert sup_transform(f, 50.0).real == pytest.approx(1 / np.prod(q), rel=1e-12)
    vals = [sup_transform(f, x).real for x in np.linspace(0.01, 2, 30)]
    assert np.all(np.diff(vals) >= 0)
    assert 0 <= min(vals) and max(vals) <= 1 / np.prod(q)
    with pytest.raises(DomainError):
        sup_transform(f, 0.0)


def test_brownian_sup_and_inf_against_reflection():
    sigma, r, T, x = 0.3, 0.05, 0.7, 0.2
    m = PiecewiseModel((ModelPeriod(T, sigma),), r=r)
    mu = m.periods[0].mu

    def invert(kind):
        def fhat(qs):
            return np.array([kind(assemble_factorization(m, q, continuation=True), x) for q in qs])

        return talbot_invert(fhat, [T], M=12)

    # P(sup <= x) = 1 - P(hit x) where the hitting probability is the mirror
    # of the down-barrier formula
    hit_up = reflection_did(1.0, math.exp(-x), sigma, -mu, T, 0.0)
    hit_dn = reflection_did(1.0, math.exp(-x), sigma, mu, T, 0.0)
    assert invert(sup_transform) == pytest.approx(1 - hit_up, abs=1e-7)
    assert invert(inf_transform) == pytest.approx(1 - hit_dn, abs=1e-7)


def test_joint_transform_reductions():
    m = eurostoxx_model().truncated(2)
    q = np.array([0.8 + 0.3j, 1.3])
    f = assemble_factorization(m, q)
    x = 0.15
    assert joint_transform(f, m, x, 0.0, "-") == pytest.approx(1 / np.prod(q) - inf_transform(f, x), rel=1e-12)
    assert joint_transform(f, m, x, 0.0, "+") == pytest.approx(1 / np.prod(q) - sup_transform(f, x), rel=1e-12)
    with pytest.raises(DomainError):
        joint_transform(f, m, x, -3.5, "-")


def test_joint_transform_brownian_scalar():
    m = PiecewiseModel((ModelPeriod(1.0, 0.25),), r=0.04)
    p, q, x = m.periods[0], 0.9, 0.3
    f = assemble_factorization(m, [q])
    rp, rm = find_roots(m, [q])
    for s in (-1.5, 0.5, 2.0):
        psi = laplace_exponent(p, s).real
        assert joint_transform(f, m, x, s, "+") == pytest.approx(math.exp((s - rp[0]) * x) / (q - psi), rel=1e-12)
        assert joint_transform(f, m, x, s, "-") == pytest.approx(math.exp((rm[0] - s) * x) / (q - psi), rel=1e-12)


def test_killed_moment_perturbs_on_a_root():
    # sigma = 1 and r = 1/2 give zero drift, so s = 1 is an exact root at q = 1/2
    m = PiecewiseModel((ModelPeriod(1.0, 1.0),), r=0.5)
    b = build_generator(m, [0.5])
    assert k_matrix(b, 1.0)[0, 0] == 0
    with pytest.warns(RuntimeWarning):
        out = killed_moment(b, 1.0)
    assert np.all(np.isfinite(out))
