"""Monte Carlo oracle for the piecewise hyper-exponential model.

Diffusion increments are simulated on an Euler grid aligned with the period
boundaries; jumps are counted per grid cell (Poisson with rate ``pi dt`` per
family) and their sizes summed as Gamma variates.  The running minimum is
tracked at grid resolution, so barrier prices carry a discrete-monitoring
bias of order ``sqrt(dt)``.

Paths are generated in fixed-size blocks, block ``j`` drawing from its own
Philox stream spawned from the seed, so any path is reproducible regardless
of how blocks are distributed over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .model import PiecewiseModel, ensure_valid
from .pricing import DIC, DID, BarrierContract

Z95 = 1.959963984540054


@dataclass(frozen=True)
class McConfig:
    paths: int = 200_000
    dt: float = 1e-3
    seed: int = 20070220
    bump: float = 0.01
    antithetic: bool = False
    block: int = 8192
    workers: int = 1
    step_chunk: int = 256

    def __post_init__(self):
        if self.paths < 1:
            raise DomainError("need at least one path")
        if not self.dt > 0:
            raise DomainError("time step must be positive")
        if self.block < 2 or (self.antithetic and self.block % 2):
            raise DomainError("block size must be an even number >= 2")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")

    def check(self, m: PiecewiseModel) -> None:
        if self.dt > min(m.durations) + 1e-15:
            raise DomainError(f"dt={self.dt} exceeds the shortest period {min(m.durations)}")


@dataclass(frozen=True)
class McEstimate:
    mean: float
    se: float
    n: int

    @property
    def ci(self) -> tuple[float, float]:
        return (self.mean - Z95 * self.se, self.mean + Z95 * self.se)

    def covers(self, value: float) -> bool:
        lo, hi = self.ci
        return lo <= value <= hi

    @classmethod
    def from_samples(cls, x: np.ndarray) -> "McEstimate":
        x = np.asarray(x, dtype=float)
        n = x.size
        se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        return cls(float(x.mean()), se, n)


def _stream(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _period_grid(duration: float, dt: float) -> tuple[int, float]:
    n = max(1, math.ceil(duration / dt - 1e-9))
    return n, duration / n


def _jump_sum(rng, rates, alphas, shape, h) -> np.ndarray:
    """Total size of the jumps of the given families in cells of length ``h``."""
    out = np.zeros(shape)
    for pi, a in zip(rates, alphas):
        if pi == 0:
            continue
        k = rng.poisson(pi * h, size=shape)
        hit = k > 0
        if np.any(hit):
            out[hit] += rng.gamma(k[hit], 1.0 / a)
    return out


def _simulate_block(m: PiecewiseModel, cfg: McConfig, j: int, n: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    rng = _stream(cfg.seed, j)
    half = n // 2 if cfg.antithetic else n
    x = np.zeros(n)
    low = np.zeros(n)
    for p in m.periods[:horizon]:
        steps, h = _period_grid(p.duration, cfg.dt)
        done = 0
        while done < steps:
            c = min(cfg.step_chunk, steps - done)
            z = rng.standard_normal((c, half))
            if cfg.antithetic:
                z = np.concatenate([z, -z], axis=1)
            inc = p.mu * h + p.sigma * math.sqrt(h) * z
            inc += _jump_sum(rng, p.pi_plus, p.alpha_plus, (c, n), h)
            inc -= _jump_sum(rng, p.pi_minus, p.alpha_minus, (c, n), h)
            path = x + np.cumsum(inc, axis=0)
            low = np.minimum(low, path.min(axis=0))
            x = path[-1]
            done += c
    return low, x


def _blocks(cfg: McConfig) -> list[tuple[int, int]]:
    full, rest = divmod(cfg.paths, cfg.block)
    sizes = [cfg.block] * full
    if rest:
        if cfg.antithetic and rest % 2:
            rest += 1
        sizes.append(rest)
    return list(enumerate(sizes))


def simulate_min_and_terminal(
    m: PiecewiseModel, cfg: McConfig, horizon: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Running minimum and terminal value of ``X`` (``X_0 = 0``) per path.

    ``horizon`` limits the simulation to the first periods of the model.
    """
    ensure_valid(m)
    cfg.check(m)
    horizon = m.N if horizon is None else horizon
    jobs = _blocks(cfg)
    run = lambda job: _simulate_block(m, cfg, job[0], job[1], horizon)  # noqa: E731
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]
    low = np.concatenate([p[0] for p in parts])
    term = np.concatenate([p[1] for p in parts])
    return low, term


def terminal_samples(m: PiecewiseModel, i: int, cfg: McConfig) -> np.ndarray:
    """Exact draws of ``X`` at maturity ``T_i`` (1-based), no time grid."""
    ensure_valid(m)
    out = []
    for j, n in _blocks(cfg):
        rng = _stream(cfg.seed, j)
        half = n // 2 if cfg.antithetic else n
        x = np.zeros(n)
        for p in m.periods[:i]:
            z = rng.standard_normal(half)
            if cfg.antithetic:
                z = np.concatenate([z, -z])
            x += p.mu * p.duration + p.sigma * math.sqrt(p.duration) * z
            x += _jump_sum(rng, p.pi_plus, p.alpha_plus, (n,), p.duration)
            x -= _jump_sum(rng, p.pi_minus, p.alpha_minus, (n,), p.duration)
        out.append(x)
    return np.concatenate(out)


def _payoff(m: PiecewiseModel, contract: BarrierContract, spot: float, low, term) -> np.ndarray:
    h = math.log(contract.barrier / spot)
    hit = low <= h
    disc = math.exp(-m.r * float(np.sum(m.durations)))
    if contract.kind == DID:
        return disc * hit
    return disc * np.where(hit, np.maximum(spot * np.exp(term) - contract.strike, 0.0), 0.0)


def _barrier_paths(m: PiecewiseModel, contract: BarrierContract, cfg: McConfig):
    contract.check_schedule(m)
    contract.log_barrier(m)
    return simulate_min_and_terminal(m, cfg)


def mc_did(m: PiecewiseModel, contract: BarrierContract, cfg: McConfig = McConfig()) -> McEstimate:
    if contract.kind != DID:
        raise DomainError("mc_did needs a down-and-in digital")
    low, term = _barrier_paths(m, contract, cfg)
    return McEstimate.from_samples(_payoff(m, contract, m.spot, low, term))


def mc_dic(m: PiecewiseModel, contract: BarrierContract, cfg: McConfig = McConfig()) -> McEstimate:
    if contract.kind != DIC:
        raise DomainError("mc_dic needs a down-and-in call")
    low, term = _barrier_paths(m, contract, cfg)
    return McEstimate.from_samples(_payoff(m, contract, m.spot, low, term))


def mc_barrier_strikes(m: PiecewiseModel, barrier: float, strikes, cfg: McConfig = McConfig()) -> list[McEstimate]:
    """Down-and-in calls at several strikes from one set of paths."""
    low, term = _barrier_paths(m, BarrierContract(DIC, barrier, strike=1.0), cfg)
    return [
        McEstimate.from_samples(_payoff(m, BarrierContract(DIC, barrier, strike=float(k)), m.spot, low, term))
        for k in np.atleast_1d(strikes)
    ]


def mc_did_spots(m: PiecewiseModel, barrier: float, spots, cfg: McConfig = McConfig()) -> list[McEstimate]:
    """Down-and-in digitals at several spots from one set of paths."""
    low, term = simulate_min_and_terminal(m, cfg)
    out = []
    for s in np.atleast_1d(spots):
        c = BarrierContract(DID, barrier)
        c.log_barrier(m.with_spot(float(s)))
        out.append(McEstimate.from_samples(_payoff(m, c, float(s), low, term)))
    return out


def mc_european(m: PiecewiseModel, i: int, strike, cfg: McConfig = McConfig()):
    """European call at maturity ``T_i`` (1-based); one estimate per strike."""
    if not 1 <= i <= m.N:
        raise DomainError(f"maturity index {i} outside 1..{m.N}")
    x = terminal_samples(m, i, cfg)
    disc = math.exp(-m.r * m.maturities[i - 1])
    ST = m.spot * np.exp(x)
    ks = np.atleast_1d(np.asarray(strike, dtype=float))
    est = [McEstimate.from_samples(disc * np.maximum(ST - k, 0.0)) for k in ks]
    return est[0] if np.ndim(strike) == 0 else est


def mc_greeks(
    m: PiecewiseModel, contract: BarrierContract, cfg: McConfig = McConfig()
) -> tuple[McEstimate, McEstimate]:
    """Bump-and-revalue delta and gamma with common random numbers.

    The log-return paths do not depend on the spot, so the three revaluations
    at ``S0 (1 - bump)``, ``S0``, ``S0 (1 + bump)`` share one simulation.
    """
    if not cfg.bump > 0:
        raise DomainError("relative bump must be positive")
    low, term = _barrier_paths(m, contract, cfg)
    S = m.spot
    dn, mid, up = (_payoff(m, contract, S * f, low, term) for f in (1 - cfg.bump, 1.0, 1 + cfg.bump))
    dS = S * cfg.bump
    delta = McEstimate.from_samples((up - dn) / (2 * dS))
    gamma = McEstimate.from_samples((up - 2 * mid + dn) / dS**2)
    return delta, gamma
