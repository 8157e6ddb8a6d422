"""Matrix Wiener-Hopf factorisation of the randomised model.

Randomising the period lengths into independent exponential times with rates
``q_i`` turns ``X`` into a regime-switching jump diffusion.  Replacing each
jump by a linear stretch of slope +-1 gives a continuous Markov additive
process whose modulating chain has generator ``Q``.  States are ordered

    [diffusion states 1..N | positive-jump states | negative-jump states]

with the jump states grouped period by period, families inside a period.

The generators of the ladder processes, ``Q_plus`` (supremum) and
``Q_minus`` (infimum), are recovered spectrally from the roots of
``det K(s) = 0`` where ``K(s) = s^2/2 S~^2 + s V~ + Q``.  Conventions:

* ``Q_plus`` has eigenvalues ``-rho`` for the positive roots ``rho``, so
  ``P(sup X > x) ~ e1' exp(Q_plus x) 1``;
* ``Q_minus`` has eigenvalues equal to the negative roots, so
  ``P(-inf X > x) ~ e1' exp(Q_minus x) 1`` with ``x > 0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import linalg, optimize

from .exceptions import DomainError, NumericalFailure
from .model import ModelPeriod, PiecewiseModel, ensure_valid, laplace_exponent, laplace_exponent_derivative

ROOT_TOL = 1e-12
WH_TOL = 1e-8
COND_MAX = 1e12
COND_SPECTRAL = 1e6
HOMOTOPY_STEPS = 16


def _check_q(q, N: int, continuation: bool) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q, dtype=complex))
    if q.shape != (N,):
        raise DomainError(f"expected {N} Laplace variables, got shape {q.shape}")
    if continuation:
        bad = (q.real <= 0) & (q.imag == 0)
    else:
        bad = q.real <= 0
    if np.any(bad):
        raise DomainError("Laplace variables need a positive real part")
    return q


# --- generator -------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorBlocks:
    """Generator ``Q`` of the embedded chain and its block decomposition."""

    Q: np.ndarray
    s2_tilde: np.ndarray
    v_tilde: np.ndarray
    q: np.ndarray
    N: int
    n_plus: int
    n_minus: int

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @property
    def diff_idx(self) -> np.ndarray:
        return np.arange(self.N)

    @property
    def pos_idx(self) -> np.ndarray:
        return self.N + np.arange(self.N * self.n_plus)

    @property
    def neg_idx(self) -> np.ndarray:
        return self.N * (1 + self.n_plus) + np.arange(self.N * self.n_minus)

    def side_idx(self, side: str) -> tuple[np.ndarray, np.ndarray]:
        """(states kept by the ladder process, states jumped over)."""
        if side == "+":
            return np.concatenate([self.diff_idx, self.pos_idx]), self.neg_idx
        if side == "-":
            return np.concatenate([self.diff_idx, self.neg_idx]), self.pos_idx
        raise ValueError(f"side must be '+' or '-', got {side!r}")

    def _sub(self, rows, cols):
        return self.Q[np.ix_(rows, cols)]

    @property
    def H_plus(self):
        keep, _ = self.side_idx("+")
        return self._sub(keep, keep)

    @property
    def D_minus(self):
        keep, jump = self.side_idx("+")
        return self._sub(keep, jump)

    @property
    def C_minus(self):
        keep, jump = self.side_idx("+")
        return self._sub(jump, keep)

    @property
    def T_minus(self):
        return self._sub(self.neg_idx, self.neg_idx)

    @property
    def T_plus(self):
        return self._sub(self.pos_idx, self.pos_idx)

    @property
    def G(self):
        """Bidiagonal period-switching block: ``-q_i`` on the diagonal, ``q_i`` above."""
        return np.diag(-self.q) + np.diag(self.q[:-1], 1)

    @property
    def b_plus(self):
        return self._sub(self.diff_idx, self.pos_idx)

    @property
    def b_minus(self):
        return self._sub(self.diff_idx, self.neg_idx)

    @property
    def t_plus(self):
        return self._sub(self.pos_idx, self.diff_idx)

    @property
    def t_minus(self):
        return self._sub(self.neg_idx, self.diff_idx)

    @property
    def S2(self):
        keep, _ = self.side_idx("+")
        return np.diag(self.s2_tilde[keep])

    @property
    def V_plus(self):
        keep, _ = self.side_idx("+")
        return np.diag(self.v_tilde[keep])

    def K(self, s):
        """``K(s) = s^2/2 S~^2 + s V~ + Q``."""
        return k_matrix(self, s)


def build_generator(m: PiecewiseModel, q, continuation: bool = False) -> GeneratorBlocks:
    """Assemble ``Q`` for Laplace variables ``q`` (one per period).

    ``continuation=True`` also admits complex ``q`` with non-positive real
    part, as needed on Talbot contours.
    """
    ensure_valid(m)
    N, npl, nmi = m.N, m.n_plus, m.n_minus
    q = _check_q(q, N, continuation)
    dim = N * (1 + npl + nmi)
    Q = np.zeros((dim, dim), dtype=complex)
    s2 = np.zeros(dim)
    v = np.zeros(dim)
    pos0, neg0 = N, N * (1 + npl)
    for i, p in enumerate(m.periods):
        Q[i, i] = -q[i] - p.lambda_plus - p.lambda_minus
        if i + 1 < N:
            Q[i, i + 1] = q[i]
        s2[i] = p.sigma**2
        v[i] = p.mu
        for k, (pi, a) in enumerate(zip(p.pi_plus, p.alpha_plus)):
            j = pos0 + i * npl + k
            Q[i, j] = pi
            Q[j, i] = a
            Q[j, j] = -a
            v[j] = 1.0
        for k, (pi, a) in enumerate(zip(p.pi_minus, p.alpha_minus)):
            j = neg0 + i * nmi + k
            Q[i, j] = pi
            Q[j, i] = a
            Q[j, j] = -a
            v[j] = -1.0
    if np.all(q.imag == 0):
        Q = Q.real.astype(float)
    return GeneratorBlocks(Q, s2, v, q, N, npl, nmi)


def k_matrix(blocks: GeneratorBlocks, s) -> np.ndarray:
    s = complex(s)
    return 0.5 * s * s * np.diag(blocks.s2_tilde) + s * np.diag(blocks.v_tilde) + blocks.Q


def det_k_product(m: PiecewiseModel, q, s) -> float:
    """Right-hand side of the determinant identity: product over periods of
    ``|psi_i(s) - q_i| prod_k |s - alpha_k^+| prod_l |s + alpha_l^-|``."""
    out = 1.0
    for p, qi in zip(m.periods, np.atleast_1d(q)):
        term = abs(laplace_exponent(p, s) - qi)
        term *= np.prod([abs(s - a) for a in p.alpha_plus]) if p.n_plus else 1.0
        term *= np.prod([abs(s + a) for a in p.alpha_minus]) if p.n_minus else 1.0
        out *= term
    return float(out)


# --- roots -----------------------------------------------------------------

def _numerator(period: ModelPeriod):
    """Polynomials ``(A, B)`` with ``(psi(s) - q) * D(s) = A(s) - q B(s)``,
    ``D(s) = prod (alpha_k^+ - s) prod (alpha_l^- + s)``."""
    factors = [np.array([a, -1.0]) for a in period.alpha_plus] + [np.array([a, 1.0]) for a in period.alpha_minus]
    D = np.array([1.0])
    for f in factors:
        D = P.polymul(D, f)
    A = P.polymul(np.array([0.0, period.mu, 0.5 * period.sigma**2]), D)
    for idx, (pi, a) in enumerate(zip(period.pi_plus, period.alpha_plus)):
        rest = np.array([1.0])
        for j, f in enumerate(factors):
            if j != idx:
                rest = P.polymul(rest, f)
        A = P.polyadd(A, pi * P.polymul(np.array([0.0, 1.0]), rest))
    for idx, (pi, a) in enumerate(zip(period.pi_minus, period.alpha_minus)):
        rest = np.array([1.0])
        for j, f in enumerate(factors):
            if j != period.n_plus + idx:
                rest = P.polymul(rest, f)
        A = P.polysub(A, pi * P.polymul(np.array([0.0, 1.0]), rest))
    return A, D


def _poly_roots(period: ModelPeriod, q: complex) -> np.ndarray:
    A, D = _numerator(period)
    return P.polyroots(P.polysub(A.astype(complex), q * D))


def _term_scale(period: ModelPeriod, s) -> np.ndarray:
    s = np.asarray(s, dtype=complex)
    out = np.abs(0.5 * period.sigma**2 * s * s) + np.abs(period.mu * s)
    for pi, a in zip(period.pi_plus, period.alpha_plus):
        out = out + np.abs(pi * s / (a - s))
    for pi, a in zip(period.pi_minus, period.alpha_minus):
        out = out + np.abs(pi * s / (a + s))
    return out


def _polish(period: ModelPeriod, q: complex, s: np.ndarray, iters: int = 8) -> np.ndarray:
    s = np.array(s, dtype=complex)
    for _ in range(iters):
        f = laplace_exponent(period, s) - q
        step = f / laplace_exponent_derivative(period, s)
        s = s - step
        if np.all(np.abs(step) <= 1e-15 * (1 + np.abs(s))):
            break
    return s


def _root_residual_ok(period, q, s, tol) -> bool:
    res = np.abs(laplace_exponent(period, s) - q)
    return bool(np.all(res <= tol * (1.0 + abs(q) + _term_scale(period, s))))


def _active(period: ModelPeriod) -> ModelPeriod:
    """The period without its zero-intensity jump families."""
    keep_p = [k for k, pi in enumerate(period.pi_plus) if pi > 0]
    keep_m = [k for k, pi in enumerate(period.pi_minus) if pi > 0]
    if len(keep_p) == period.n_plus and len(keep_m) == period.n_minus:
        return period
    return replace(
        period,
        pi_plus=tuple(period.pi_plus[k] for k in keep_p),
        alpha_plus=tuple(period.alpha_plus[k] for k in keep_p),
        pi_minus=tuple(period.pi_minus[k] for k in keep_m),
        alpha_minus=tuple(period.alpha_minus[k] for k in keep_m),
    )


def _real_roots(period: ModelPeriod, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Roots of ``psi(s) = q`` for real ``q > 0`` by bracketing on the pole ladder.

    Returns ``(positive roots ascending, negative roots descending)``; one root
    lies strictly between consecutive poles and one beyond the last pole.
    """
    out = []
    for poles, sign in ((sorted(period.alpha_plus), 1.0), (sorted(period.alpha_minus), -1.0)):
        g = lambda t: float(np.real(laplace_exponent(period, sign * t))) - q
        edges = [0.0] + list(poles)
        roots = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            a = lo * (1 + 1e-15) if lo > 0 else 1e-300
            roots.append(_brent(g, a, hi * (1 - 1e-15)))
        lo = edges[-1] * (1 + 1e-15) if poles else 1e-300
        hi = max(1.0, 2 * edges[-1])
        while g(hi) < 0:
            hi *= 2.0
            if hi > 1e15:
                raise NumericalFailure("no outer root found for psi(s) = q")
        roots.append(_brent(g, lo, hi))
        out.append(sign * np.array(roots))
    return out[0], out[1]


def _brent(g, a, b):
    return optimize.brentq(g, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def _track(period: ModelPeriod, q: complex, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Continue the real-``|q|`` roots along the segment from ``|q|`` to ``q``."""
    start = abs(q)
    pos, neg = _real_roots(period, start)
    roots = np.concatenate([pos, neg]).astype(complex)
    n_pos = pos.size
    t, dt = 0.0, 1.0 / steps
    while t < 1.0:
        dt = min(dt, 1.0 - t)
        target = start + (t + dt) * (q - start)
        cand = _poly_roots(period, target)
        cost = np.abs(roots[:, None] - cand[None, :])
        rows, cols = optimize.linear_sum_assignment(cost)
        moved = cost[rows, cols].max()
        sep = np.abs(roots[:, None] - roots[None, :])
        np.fill_diagonal(sep, np.inf)
        if moved > 0.25 * sep.min() and dt > 1e-6:
            dt *= 0.5
            continue
        new = np.empty_like(roots)
        new[rows] = cand[cols]
        roots = _polish(period, target, new)
        t += dt
        dt = min(2 * dt, 1.0 / steps)
    return roots[:n_pos], roots[n_pos:]


def period_roots(period: ModelPeriod, q: complex, steps: int = HOMOTOPY_STEPS, tol: float = ROOT_TOL):
    """Roots of ``det K_i(s) = 0`` on one period, split into the ``1 + n^+``
    roots continuing the positive real roots and the ``1 + n^-`` continuing
    the negative ones.

    These solve ``psi(s) = q``, except that a jump family with zero
    intensity contributes its own pole ``alpha`` (or ``-alpha``) as a root.
    """
    q = complex(q)
    act = _active(period)
    if q.imag == 0:
        if q.real <= 0:
            raise DomainError("real Laplace variables must be positive")
        pos, neg = _real_roots(act, q.real)
        pos, neg = pos.astype(complex), neg.astype(complex)
    else:
        pos, neg = _track(act, q, steps)
    if pos.size != 1 + act.n_plus or neg.size != 1 + act.n_minus:
        raise NumericalFailure("root count mismatch")
    if not _root_residual_ok(act, q, np.concatenate([pos, neg]), tol):
        raise NumericalFailure(f"root polishing failed for q={q}")
    if q.real > 0 and (np.any(pos.real <= 0) or np.any(neg.real >= 0)):
        raise NumericalFailure(f"roots crossed the imaginary axis for q={q}")
    idle_p = [a for a, pi in zip(period.alpha_plus, period.pi_plus) if pi == 0]
    idle_m = [-a for a, pi in zip(period.alpha_minus, period.pi_minus) if pi == 0]
    if idle_p or idle_m:
        pos = np.concatenate([pos, np.array(idle_p, dtype=complex)])
        neg = np.concatenate([neg, np.array(idle_m, dtype=complex)])
        if q.imag == 0:
            pos, neg = np.sort(pos), np.sort(neg)[::-1]
    return pos, neg


def find_roots(m: PiecewiseModel, q, steps: int = HOMOTOPY_STEPS, continuation: bool = False):
    """All roots of ``det K(s) = 0``: ``N(1+n^+)`` positive, ``N(1+n^-)`` negative.

    Ordered period by period; within a period positive roots ascend and
    negative roots descend (closest to zero first).
    """
    ensure_valid(m)
    q = _check_q(q, m.N, continuation)
    plus, minus = [], []
    for p, qi in zip(m.periods, q):
        pos, neg = period_roots(p, qi, steps)
        plus.append(pos)
        minus.append(neg)
    rp, rm = np.concatenate(plus), np.concatenate(minus)
    if np.all(q.imag == 0):
        rp, rm = rp.real, rm.real
    return rp, rm


# --- spectral factorisation -------------------------------------------------

def _state_coefficients(m: PiecewiseModel, q: np.ndarray, rho: np.ndarray, owner: np.ndarray) -> np.ndarray:
    """Null vectors of ``K(rho)`` in closed form, one column per root.

    Eliminating the jump states of period ``j`` leaves the scalar recursion
    ``(psi_j(rho) - q_j) a_j + q_j a_{j+1} = 0``.  For a root of period ``w``
    the diffusion entries vanish after ``w``, equal 1 at ``w`` and follow
    ``a_j = a_{j+1} q_j / (q_j - psi_j(rho))`` before it; a jump state with
    rate ``alpha`` of period ``j`` carries ``alpha a_j / (alpha -+ rho)``.

    ``q`` has shape ``(..., N)``, ``rho``/``owner`` shape ``(..., n)``; the
    result has shape ``(..., dim, n)``.
    """
    N, npl, nmi = m.N, m.n_plus, m.n_minus
    batch = rho.shape[:-1]
    nroots = rho.shape[-1]
    dim = N * (1 + npl + nmi)
    out = np.zeros(batch + (dim, nroots), dtype=complex)
    # roots sitting on the pole of a zero-intensity family: the null vector
    # is the indicator of that (unreachable) jump state
    idle = np.zeros(rho.shape, dtype=bool)
    for j, p in enumerate(m.periods):
        for k, (pi, al) in enumerate(zip(p.pi_plus, p.alpha_plus)):
            if pi == 0:
                hit = (owner == j) & (rho == al)
                out[..., N + j * npl + k, :] = hit
                idle |= hit
        for k, (pi, al) in enumerate(zip(p.pi_minus, p.alpha_minus)):
            if pi == 0:
                hit = (owner == j) & (rho == -al)
                out[..., N * (1 + npl) + j * nmi + k, :] = hit
                idle |= hit
    live = np.where(idle, 0.0, rho)
    a = np.zeros(batch + (N, nroots), dtype=complex)
    for w in range(N - 1, -1, -1):
        a[..., w, :] = np.where(owner == w, 1.0, a[..., w, :])
        if w + 1 < N:
            qw = q[..., w][..., None]
            with np.errstate(divide="ignore", invalid="ignore"):
                carry = qw / (qw - laplace_exponent(m.periods[w], live)) * a[..., w + 1, :]
            a[..., w, :] = np.where(owner > w, carry, a[..., w, :])
    a = np.where(idle[..., None, :], 0.0, a)
    out[..., :N, :] = a
    for j, p in enumerate(m.periods):
        for k, al in enumerate(p.alpha_plus):
            col = N + j * npl + k
            out[..., col, :] = np.where(idle, out[..., col, :], al * a[..., j, :] / (al - live))
        for k, al in enumerate(p.alpha_minus):
            col = N * (1 + npl) + j * nmi + k
            out[..., col, :] = np.where(idle, out[..., col, :], al * a[..., j, :] / (al + live))
    return out


def null_vector(K: np.ndarray) -> np.ndarray:
    """Right singular vector of the smallest singular value, scaled so that
    its largest-modulus entry is real and positive."""
    _, _, vh = np.linalg.svd(K)
    v = vh[-1].conj()
    j = np.argmax(np.abs(v))
    return v * (abs(v[j]) / v[j])


def _side_parameters(m: PiecewiseModel, side: str):
    """Per-period (mu, sigma^2, ladder-side jumps, opposite jumps) for the
    infimum of ``X`` (``side="-"``) or of ``-X`` (``side="+"``)."""
    out = []
    for p in m.periods:
        if side == "-":
            out.append((p.mu, p.sigma**2, p.alpha_minus, p.pi_plus, p.alpha_plus))
        else:
            out.append((-p.mu, p.sigma**2, p.alpha_plus, p.pi_minus, p.alpha_minus))
    return out


def ladder_generator_blocks(m: PiecewiseModel, q: np.ndarray, rho: np.ndarray, side: str) -> np.ndarray:
    """Ladder generator without a global eigendecomposition.

    The generator is block upper triangular in the periods.  Each diagonal
    block is the single-period ladder generator (diagonalised with its own,
    well separated, roots).  Rows of ladder-side jump states are known in
    closed form, and the diffusion row of period ``i`` restricted to period
    ``w > i`` solves a small linear system obtained from the Wiener-Hopf
    equation of that row.  Unlike ``U diag(rho) U^{-1}`` this stays
    accurate when roots of different periods coincide.

    ``q`` has shape ``(n, N)`` and ``rho`` the root layout of
    :func:`spectral_batch`; the result, shape ``(n, d, d)``, uses the state
    order of the ladder side (diffusion states, then jump states period by
    period).
    """
    params = _side_parameters(m, side)
    N = m.N
    nj = m.n_minus if side == "-" else m.n_plus
    b = 1 + nj
    n = q.shape[0]
    eye = np.eye(b)
    D = []
    for i, (mu, s2, al, _, _) in enumerate(params):
        r = rho[:, i * b:(i + 1) * b] if side == "-" else -rho[:, i * b:(i + 1) * b]
        V = np.zeros((n, b, b), dtype=complex)
        V[:, 0, :] = 1.0
        idle = [r == -a for a in al]
        live = np.where(np.any(idle, axis=0) if idle else False, 0.0, r)
        for k, a in enumerate(al):
            V[:, 1 + k, :] = a / (a + live)
        # a root on the pole of a zero-intensity family has a unit eigenvector
        for k, hit in enumerate(idle):
            V[:, :, :] = np.where(hit[:, None, :], 0.0, V)
            V[:, 1 + k, :] = np.where(hit, 1.0, V[:, 1 + k, :])
        D.append((V * r[:, None, :]) @ np.linalg.inv(V))
    L = np.zeros((n, N * b, N * b), dtype=complex)
    for i in range(N):
        L[:, i * b:(i + 1) * b, i * b:(i + 1) * b] = D[i]
    # the diffusion row of period i sees the opposite jump families of period
    # i through resolvents (alpha - L)^{-1}; rows below i are already final
    for i in range(N - 1, -1, -1):
        mu, s2, _, opi, oal = params[i]
        d0 = D[i][:, 0, 0]
        tail = slice((i + 1) * b, N * b)
        coef, R = [], []
        for p, a in zip(opi, oal):
            zii = np.linalg.inv(a * eye - D[i])[:, 0, 0]
            coef.append(p * a * zii)
            R.append(np.linalg.inv(a * np.eye(N * b - (i + 1) * b) - L[:, tail, tail]))
        for w in range(i + 1, N):
            wb = slice(w * b, (w + 1) * b)
            rw = slice((w - i - 1) * b, (w - i) * b)
            A = (0.5 * s2 * d0 + mu)[:, None, None] * eye + 0.5 * s2 * D[w]
            rhs = np.zeros((n, b), dtype=complex)
            if w == i + 1:
                rhs[:, 0] = q[:, i]
            for j in range(i + 1, w):
                rhs += 0.5 * s2 * L[:, i * b, j * b][:, None] * L[:, j * b, wb]
            lead = L[:, i * b, (i + 1) * b:w * b]
            for c, Rk in zip(coef, R):
                A = A + c[:, None, None] * Rk[:, rw, rw]
                rhs += c[:, None] * np.einsum("nj,njk->nk", lead, Rk[:, : (w - i - 1) * b, rw])
            L[:, i * b, wb] = np.linalg.solve(np.swapaxes(A, 1, 2), -rhs[..., None])[..., 0]
    # period-block order -> ladder order (diffusion states first)
    perm = np.r_[np.arange(N) * b, [i * b + 1 + k for i in range(N) for k in range(nj)]].astype(int)
    return L[:, perm][:, :, perm]


@dataclass(frozen=True)
class SpectralBatch:
    """One side of the factorisation at a batch of nodes ``q`` (axis 0).

    ``U`` holds the eigenvector matrices restricted to the ladder states of
    the side, ``rho`` the matching eigenvalues of ``Q_minus`` (negative
    roots) or ``-rho`` of ``Q_plus``.  Nodes where ``U`` is numerically
    singular (roots of different periods nearly coinciding) are handled by
    :func:`ladder_generator_blocks` and a matrix exponential.
    """

    side: str
    q: np.ndarray
    rho: np.ndarray
    vectors: np.ndarray
    keep: np.ndarray
    jump: np.ndarray
    model: PiecewiseModel | None = None

    @cached_property
    def U(self) -> np.ndarray:
        return self.vectors[..., self.keep, :]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the ladder generator."""
        return self.rho if self.side == "-" else -self.rho

    @cached_property
    def condition(self) -> np.ndarray:
        U = self.U
        finite = np.all(np.isfinite(U), axis=(-2, -1))
        out = np.full(U.shape[0], np.inf)
        if np.any(finite):
            out[finite] = np.linalg.cond(U[finite])
        return out

    @cached_property
    def singular(self) -> np.ndarray:
        """Nodes where the spectral form is not trusted."""
        return ~(self.condition < COND_SPECTRAL)

    @cached_property
    def U_inv(self) -> np.ndarray:
        U = np.where(self.singular[:, None, None], np.eye(self.U.shape[-1]), self.U)
        return np.linalg.inv(U)

    def check_conditioning(self, limit: float = COND_MAX) -> None:
        bad = ~(self.condition < limit)
        if np.any(bad):
            j = int(np.argmax(bad))
            raise NumericalFailure(
                f"eigenvector matrix is near-singular (cond={self.condition[j]:.3g}) at q={self.q[j]}"
            )

    @cached_property
    def generator(self) -> np.ndarray:
        """Ladder generators, shape ``(n, d, d)``."""
        L = (self.U * self.eigenvalues[:, None, :]) @ self.U_inv
        bad = self.singular
        if np.any(bad):
            if self.model is None:
                raise NumericalFailure("singular eigenvector matrix and no model for the block fallback")
            L[bad] = ladder_generator_blocks(self.model, self.q[bad], self.rho[bad], self.side)
        return L

    def first_row_weights(self, rhs: np.ndarray, power: int = 0, x: float = 0.0) -> np.ndarray:
        """``e1' L^power exp(L x) rhs`` where ``L`` is the ladder generator.

        ``rhs`` has shape ``(n_nodes, d)`` or ``(n_nodes, d, m)``.
        """
        vec = rhs.ndim == 2
        rhs = rhs[..., None] if vec else rhs
        lam = self.eigenvalues
        coef = self.U[:, 0, :] * lam**power * np.exp(lam * x)
        bad = self.singular
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.einsum("nj,njm->nm", coef, np.einsum("nij,njm->nim", self.U_inv, rhs))
        if np.any(bad):
            L = self.generator[bad]
            row = linalg.expm(L * x)[:, 0, :]
            for _ in range(power):
                row = np.einsum("nj,njk->nk", row, L)
            out[bad] = np.einsum("nj,njm->nm", row, rhs[bad])
        return out[..., 0] if vec else out


def spectral_batch(m: PiecewiseModel, q_nodes, side: str, steps: int = HOMOTOPY_STEPS) -> SpectralBatch:
    """Spectral data of one ladder generator at many nodes ``q`` (shape ``(n, N)``).

    Roots of period ``i`` depend on ``q_i`` only, so they are computed once
    per distinct value in each column.
    """
    ensure_valid(m)
    q_nodes = np.atleast_2d(np.asarray(q_nodes, dtype=complex))
    n, N = q_nodes.shape
    if N != m.N:
        raise DomainError(f"expected {m.N} Laplace variables per node")
    per = (1 + m.n_minus) if side == "-" else (1 + m.n_plus)
    rho = np.empty((n, N * per), dtype=complex)
    owner = np.repeat(np.arange(N), per)
    for i, p in enumerate(m.periods):
        col = q_nodes[:, i]
        if np.any((col.real <= 0) & (col.imag == 0)):
            raise DomainError("Laplace variables need a positive real part")
        uniq, inv = np.unique(col, return_inverse=True)
        found = np.array([period_roots(p, u, steps)[0 if side == "+" else 1] for u in uniq])
        rho[:, i * per:(i + 1) * per] = found[inv.reshape(-1)]
    vectors = _state_coefficients(m, q_nodes, rho, np.broadcast_to(owner, rho.shape))
    dim = N * (1 + m.n_plus + m.n_minus)
    diff = np.arange(N)
    pos = N + np.arange(N * m.n_plus)
    neg = N * (1 + m.n_plus) + np.arange(N * m.n_minus)
    keep, jump = (np.r_[diff, pos], neg) if side == "+" else (np.r_[diff, neg], pos)
    assert keep.size + jump.size == dim
    return SpectralBatch(side, q_nodes, rho, vectors, keep, jump, m)


@dataclass(frozen=True)
class SpectralFactorization:
    """Wiener-Hopf factors ``(Q_plus, eta_plus, Q_minus, eta_minus)`` at one ``q``."""

    blocks: GeneratorBlocks
    rho_plus: np.ndarray
    rho_minus: np.ndarray
    U_plus: np.ndarray
    U_minus: np.ndarray
    Q_plus: np.ndarray
    Q_minus: np.ndarray
    eta_plus: np.ndarray
    eta_minus: np.ndarray
    residual_plus: tuple[float, float]
    residual_minus: tuple[float, float]

    @property
    def q(self) -> np.ndarray:
        return self.blocks.q

    def ladder(self, side: str):
        if side == "+":
            return self.U_plus, -self.rho_plus, self.Q_plus
        if side == "-":
            return self.U_minus, self.rho_minus, self.Q_minus
        raise ValueError(f"side must be '+' or '-', got {side!r}")

    def expm(self, side: str, x: float) -> np.ndarray:
        """``exp(Q_side x)``: spectral when ``U`` is well conditioned, else
        scaling and squaring."""
        U, lam, Qs = self.ladder(side)
        if np.all(np.isfinite(U)) and np.linalg.cond(U) < COND_SPECTRAL:
            return (U * np.exp(lam * x)) @ np.linalg.inv(U)
        return linalg.expm(Qs * x)

    def first_passage(self, side: str, x: float) -> complex:
        """``e1' exp(Q_side x) 1``."""
        return complex(self.expm(side, x)[0].sum())


def _wh_residuals(blocks: GeneratorBlocks, side: str, Ql: np.ndarray, eta: np.ndarray) -> tuple[float, float]:
    """Relative residuals of the two Wiener-Hopf matrix equations.

    Evaluates ``1/2 S~^2 E L^2 - V E L + Q E`` with ``E = [I; eta]``, where the
    slopes ``V`` are those of ``X`` for the supremum and of ``-X`` for the
    infimum; rows of the ladder states give the first equation, rows of the
    jumped-over states the second.
    """
    keep, jump = blocks.side_idx(side)
    E = np.zeros((blocks.dim, keep.size), dtype=complex)
    E[keep] = np.eye(keep.size)
    E[jump] = eta
    v = blocks.v_tilde if side == "+" else -blocks.v_tilde
    R = 0.5 * blocks.s2_tilde[:, None] * (E @ Ql @ Ql) - v[:, None] * (E @ Ql) + blocks.Q @ E
    scale = np.linalg.norm(blocks.Q[np.ix_(keep, keep)])
    return float(np.linalg.norm(R[keep]) / scale), float(np.linalg.norm(R[jump]) / scale)


def _jump_rows(blocks: GeneratorBlocks, side: str, Ql: np.ndarray) -> np.ndarray:
    """``eta`` rows of the jumped-over states: a state of rate ``alpha`` in
    period ``i`` has ``eta = alpha e_i (alpha I - Q_side)^{-1}``."""
    keep, jump = blocks.side_idx(side)
    eye = np.eye(keep.size)
    eta = np.empty((jump.size, keep.size), dtype=complex)
    for row, j in enumerate(jump):
        a = -blocks.Q[j, j]
        i = int(np.flatnonzero(blocks.Q[j, blocks.diff_idx])[0])
        eta[row] = a * np.linalg.solve((a * eye - Ql).T, eye[i])
    return eta


def assemble_factorization(
    m: PiecewiseModel,
    q,
    steps: int = HOMOTOPY_STEPS,
    continuation: bool = False,
    wh_tol: float = WH_TOL,
) -> SpectralFactorization:
    """Build ``Q_plus, eta_plus, Q_minus, eta_minus`` from the null vectors
    of ``K`` at the roots, and verify both Wiener-Hopf equations."""
    blocks = build_generator(m, q, continuation=continuation)
    qv = blocks.q[None, :]
    out = {}
    for side in ("+", "-"):
        sb = spectral_batch(m, qv, side, steps)
        U = sb.U[0]
        Ql = sb.generator[0]
        eta = _jump_rows(blocks, side, Ql)
        if np.all(blocks.q.imag == 0):
            Ql, eta, U = Ql.real, eta.real, U.real
            neg = (eta < 0) & (eta >= -1e-10)
            eta = np.where(neg, 0.0, eta)
        res = _wh_residuals(blocks, side, Ql, eta)
        if not max(res) < wh_tol:
            raise NumericalFailure(f"Wiener-Hopf residual {max(res):.3g} above tolerance on side {side}")
        rho = sb.rho[0].real if np.all(blocks.q.imag == 0) else sb.rho[0]
        out[side] = (rho, U, Ql, eta, res)
    return SpectralFactorization(
        blocks,
        rho_plus=out["+"][0],
        rho_minus=out["-"][0],
        U_plus=out["+"][1],
        U_minus=out["-"][1],
        Q_plus=out["+"][2],
        Q_minus=out["-"][2],
        eta_plus=out["+"][3],
        eta_minus=out["-"][3],
        residual_plus=out["+"][4],
        residual_minus=out["-"][4],
    )


# --- transforms of first-passage functionals ---------------------------------

def _check_level(x: float) -> float:
    if not x > 0:
        raise DomainError("passage level must be positive")
    return float(x)


def sup_transform(f: SpectralFactorization, x: float) -> complex:
    """Laplace transform in the period lengths of ``P(sup X <= x)``."""
    x = _check_level(x)
    return (1.0 - f.first_passage("+", x)) / np.prod(f.q)


def inf_transform(f: SpectralFactorization, x: float) -> complex:
    """Laplace transform in the period lengths of ``P(-inf X <= x)``."""
    x = _check_level(x)
    return (1.0 - f.first_passage("-", x)) / np.prod(f.q)


def killed_moment(blocks: GeneratorBlocks, s) -> np.ndarray:
    """``K(s)^{-1} K(0) 1``: the transform of ``exp(s X)`` at the killing time,
    per starting state."""
    K = k_matrix(blocks, s)
    rhs = blocks.Q @ np.ones(blocks.dim)
    try:
        return np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        pass
    warnings.warn(f"K(s) is singular at s={s}; perturbing s by 1e-9", RuntimeWarning, stacklevel=2)
    return np.linalg.solve(k_matrix(blocks, complex(s) + 1e-9), rhs)


def moment_strip(m: PiecewiseModel) -> tuple[float, float]:
    lo = -min((a for p in m.periods for a in p.alpha_minus), default=math.inf)
    hi = min((a for p in m.periods for a in p.alpha_plus), default=math.inf)
    return lo, hi


def joint_transform(f: SpectralFactorization, m: PiecewiseModel, x: float, s, side: str = "+") -> complex:
    """Laplace transform of ``E[exp(s X_T); level crossed]``.

    ``side="+"``: crossing above ``x``; ``side="-"``: crossing below ``-x``.
    """
    x = _check_level(x)
    s = complex(s)
    lo, hi = moment_strip(m)
    if not lo < s.real < hi:
        raise DomainError(f"Re(s)={s.real} outside the moment strip ({lo}, {hi})")
    U, lam, _ = f.ladder(side)
    keep, _ = f.blocks.side_idx(side)
    w = killed_moment(f.blocks, s)[keep]
    shift = np.exp(s * x) if side == "+" else np.exp(-s * x)
    val = (U[0] * np.exp(lam * x)) @ np.linalg.solve(U, w)
    return complex(shift * val / np.prod(f.q))
