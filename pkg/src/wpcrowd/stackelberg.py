"""Task and charging-power allocation as a leader/follower game.

Workers pick transmission rates (lower level, solved by iterative best
response); the platform picks the total charging power (upper level,
1-D search over the induced equilibrium utility).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .model import (LN2, AllocationOutcome, SystemConfig, Worker,
                    platform_utility_phase1, worker_power_cost)

log = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5) - 1) / 2
MAX_DOUBLINGS = 64


class BracketError(RuntimeError):
    """The first-order condition could not be bracketed."""


@dataclass(frozen=True)
class SolverSettings:
    rate_tol: float = 1e-10
    max_iters: int = 500
    p_max: float | None = None
    p_tol: float | None = None
    scan_points: int = 33
    seed: int = 0

    def __post_init__(self):
        if not self.rate_tol > 0:
            raise ValueError("rate_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.p_max is not None and not self.p_max > 0:
            raise ValueError("p_max must be positive")
        if self.scan_points < 3:
            raise ValueError("scan_points must be >= 3")


@dataclass
class EquilibriumReport:
    outcome: AllocationOutcome
    iterations: int
    converged: bool
    platform_utility: float
    residual: float
    diagnostics: dict = field(default_factory=dict)


def marginal_utility(r: float, others: float, p_c: float, worker: Worker,
                     cfg: SystemConfig) -> float:
    """Derivative of the phase-1 worker utility with respect to its own rate."""
    total = others + r
    share_term = p_c * others / (total * total) if total > 0 else math.inf
    tx_term = worker.D ** cfg.alpha * LN2 / (cfg.g * cfg.B) * 2.0 ** (r / cfg.B)
    return share_term - tx_term - worker.b


def _own_utility(r: float, others: float, p_c: float, worker: Worker,
                 cfg: SystemConfig) -> float:
    total = others + r
    share = r / total * p_c if total > 0 else 0.0
    return share - worker_power_cost(r, worker.D, worker.b, cfg)


def best_response(i: int, other_rates, p_c: float, worker: Worker,
                  cfg: SystemConfig, settings: SolverSettings | None = None,
                  guess: float | None = None) -> float:
    """Utility-maximizing rate of ``worker`` against the others' rates.

    ``other_rates`` may be the full profile (entry ``i`` is ignored) or just
    the others' rates. The utility is strictly concave in the own rate, so
    the maximizer is the root of the first-order condition, found by a
    Newton iteration safeguarded by bisection on a doubled bracket.
    """
    others_arr = np.asarray(other_rates, dtype=float)
    if i is not None and 0 <= i < len(others_arr) and len(others_arr) > 0:
        others = float(others_arr.sum() - others_arr[i])
    else:
        others = float(others_arr.sum())
    if p_c <= 0 or others <= 0:
        return 0.0

    def f(r):
        return marginal_utility(r, others, p_c, worker, cfg)

    if f(0.0) <= 0:
        return 0.0

    lo, hi = 0.0, cfg.B
    for _ in range(MAX_DOUBLINGS):
        if f(hi) < 0:
            break
        lo, hi = hi, 2 * hi
    else:
        raise BracketError(f"worker {worker.id}: no sign change below {hi:g}")

    c_tx = worker.D ** cfg.alpha * LN2 / (cfg.g * cfg.B)
    r = guess if guess is not None and lo < guess < hi else 0.5 * (lo + hi)
    for _ in range(200):
        fr = f(r)
        if fr > 0:
            lo = r
        elif fr < 0:
            hi = r
        else:
            break
        total = others + r
        slope = (-2 * p_c * others / total ** 3
                 - c_tx * LN2 / cfg.B * 2.0 ** (r / cfg.B))
        step = r - fr / slope
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if step == r or hi - lo <= 4 * math.ulp(hi):
            r = step
            break
        r = step

    if _own_utility(r, others, p_c, worker, cfg) <= 0:
        return 0.0
    return r


def symmetric_profile(p_c: float, workers: Sequence[Worker]) -> np.ndarray:
    """Symmetric rates ``P_c (N-1) / (N^2 mean b)``.

    This is the equilibrium of the game with identical workers and
    negligible transmission cost, so it has the right order of magnitude
    for any bandwidth.
    """
    n = len(workers)
    if n == 0:
        return np.zeros(0)
    if n == 1:
        return np.full(1, p_c / workers[0].b)
    mean_b = float(np.mean([w.b for w in workers]))
    return np.full(n, p_c * (n - 1) / (n * n * mean_b))


def _rates_given_total(total: float, p_c: float, b: np.ndarray, c_tx: np.ndarray,
                       B: float, iters: int = 80) -> np.ndarray:
    # first-order condition with the aggregate fixed:
    # p_c (total - r) / total^2 = b + c_tx 2^(r/B), r in [0, total]
    def g(r):
        return p_c * (total - r) / total ** 2 - b - c_tx * np.exp2(r / B)

    active = g(np.zeros_like(b)) > 0
    lo = np.zeros_like(b)
    hi = np.full_like(b, total)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = g(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return np.where(active, 0.5 * (lo + hi), 0.0)


def aggregate_profile(p_c: float, workers: Sequence[Worker], cfg: SystemConfig) -> np.ndarray:
    """Equilibrium candidate from the aggregate-share fixed point.

    For a fixed total rate every worker's first-order condition has a
    unique solution; the total is then matched by a 1-D root search.
    Falls back to :func:`symmetric_profile` when fewer than two workers
    would be active.
    """
    n = len(workers)
    b = np.array([w.b for w in workers])
    c_tx = np.array([w.D ** cfg.alpha for w in workers]) * LN2 / (cfg.g * cfg.B)
    fallback = symmetric_profile(p_c, workers)
    if n < 2 or p_c <= 0:
        return fallback

    def excess(log_total):
        total = math.exp(log_total)
        return _rates_given_total(total, p_c, b, c_tx, cfg.B).sum() / total - 1.0

    hi = math.log(p_c / b.min())
    lo = hi - 60.0
    if not (excess(lo) > 0 > excess(hi)):
        return fallback
    log_total = brentq(excess, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    rates = _rates_given_total(math.exp(log_total), p_c, b, c_tx, cfg.B)
    if np.count_nonzero(rates) < 2:
        return fallback
    # keep every start strictly positive
    return np.where(rates > 0, rates, rates.max() * 1e-12)


def _residual(rates, p_c, workers, cfg, settings) -> float:
    worst = 0.0
    for i, w in enumerate(workers):
        br = best_response(i, rates, p_c, w, cfg, settings, guess=rates[i])
        worst = max(worst, abs(br - rates[i]))
    return worst


def nash_equilibrium(p_c: float, workers: Sequence[Worker], cfg: SystemConfig,
                     settings: SolverSettings | None = None,
                     init=None) -> EquilibriumReport:
    """Rate equilibrium for a fixed total power by Gauss-Seidel best response."""
    settings = settings or SolverSettings()
    ids = tuple(w.id for w in workers)
    n = len(workers)
    if p_c <= 0 or n == 0:
        outcome = AllocationOutcome(max(p_c, 0.0), ids, np.zeros(n), frozenset())
        return EquilibriumReport(outcome, 1, True,
                                 platform_utility_phase1(0.0, np.zeros(n), workers, cfg), 0.0)

    rates = aggregate_profile(p_c, workers, cfg) if init is None else np.array(init, dtype=float)
    if np.any(rates <= 0):
        raise ValueError("initial profile must be strictly positive")
    total = rates.sum()
    converged = False
    residual = math.inf
    restarted = False
    it = 0
    for it in range(1, settings.max_iters + 1):
        change = 0.0
        for i, w in enumerate(workers):
            others = total - rates[i]
            new = best_response(None, [others], p_c, w, cfg, settings, guess=rates[i])
            change = max(change, abs(new - rates[i]))
            total = others + new
            rates[i] = new
        # refresh the running sum to stop round-off drift
        total = rates.sum()
        if n >= 2 and np.count_nonzero(rates) < 2 and not restarted:
            # A start far above equilibrium can push all but one worker out,
            # after which the silent-others guard zeroes the last one too.
            # Positive equilibria always exist for p_c > 0, so start again
            # from the aggregate profile.
            log.info("best response collapsed at P_c=%.6g; restarting", p_c)
            rates = aggregate_profile(p_c, workers, cfg)
            total = rates.sum()
            restarted = True
            continue
        if change <= settings.rate_tol:
            residual = _residual(rates, p_c, workers, cfg, settings)
            if residual <= settings.rate_tol:
                converged = True
                break
    else:
        residual = _residual(rates, p_c, workers, cfg, settings)
        log.warning("best response did not converge in %d rounds (residual %.3g)",
                    settings.max_iters, residual)

    employed = frozenset(w.id for w, r in zip(workers, rates) if r > settings.rate_tol)
    outcome = AllocationOutcome(p_c, ids, rates, employed)
    return EquilibriumReport(outcome, it, converged,
                             platform_utility_phase1(p_c, rates, workers, cfg), residual,
                             {"restarted": restarted})


def default_p_max(workers: Sequence[Worker], cfg: SystemConfig) -> float:
    d_min = min(w.D for w in workers)
    return 10 * cfg.a1 / (cfg.kappa * d_min ** cfg.alpha)


def stackelberg_equilibrium(workers: Sequence[Worker], cfg: SystemConfig,
                            settings: SolverSettings | None = None) -> EquilibriumReport:
    """Platform-optimal total power and the induced rate equilibrium.

    A uniform scan of ``[0, p_max]`` brackets the best grid cell, then a
    golden-section search refines it. The best point evaluated anywhere
    is returned.
    """
    settings = settings or SolverSettings()
    if len(workers) == 0:
        return nash_equilibrium(0.0, workers, cfg, settings)
    p_max = settings.p_max or default_p_max(workers, cfg)
    p_tol = settings.p_tol or p_max * 1e-9

    cache: dict[float, EquilibriumReport] = {}

    def solve(p):
        if p not in cache:
            cache[p] = nash_equilibrium(p, workers, cfg, settings)
        return cache[p]

    def value(p):
        return solve(p).platform_utility

    grid = np.linspace(0.0, p_max, settings.scan_points)
    vals = [value(float(p)) for p in grid]
    k = int(np.argmax(vals))
    a = float(grid[max(k - 1, 0)])
    b = float(grid[min(k + 1, len(grid) - 1)])

    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = value(c), value(d)
    while b - a > p_tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = value(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = value(d)

    best_p = max(cache, key=lambda p: (cache[p].platform_utility, -p))
    report = cache[best_p]
    report.diagnostics.update(p_max=p_max, evaluations=len(cache),
                              all_converged=all(r.converged for r in cache.values()))
    if not report.converged:
        log.warning("equilibrium at P_c=%.6g did not converge", best_p)
    return report
