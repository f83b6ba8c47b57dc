"""Domain types and closed-form power, cost and utility formulas.

Every other module computes through these functions. Scalars are plain
floats; vectors of rates or locations are numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

LN2 = math.log(2.0)
REL_TOL = 1e-9


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[xmin, xmax] x [ymin, ymax]``."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin <= self.xmax and self.ymin <= self.ymax):
            raise ValueError(f"invalid rectangle {self}")

    @property
    def corners(self) -> np.ndarray:
        return np.array([[self.xmin, self.ymin], [self.xmin, self.ymax],
                         [self.xmax, self.ymin], [self.xmax, self.ymax]])

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def scale(self) -> float:
        return max(self.width, self.height)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.xmin, self.ymin])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.xmax, self.ymax])

    def contains(self, p, tol: float = 0.0) -> bool:
        x, y = p
        return (self.xmin - tol <= x <= self.xmax + tol
                and self.ymin - tol <= y <= self.ymax + tol)

    def clip(self, p) -> np.ndarray:
        return np.clip(np.asarray(p, dtype=float), self.lower, self.upper)

    def normalize(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        span = np.array([self.width or 1.0, self.height or 1.0])
        return (p - self.lower) / span

    def denormalize(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        span = np.array([self.width or 1.0, self.height or 1.0])
        return q * span + self.lower

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.xmax, self.ymin, self.ymax)


UNIT_SQUARE = Rect(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True)
class SystemConfig:
    """Physical and market constants, all in linear units.

    ``g`` is the channel-gain-to-noise ratio, ``B`` the bandwidth (Hz),
    ``alpha`` the path-loss exponent, ``eta`` the energy conversion
    efficiency and ``Gamma`` the combined antenna gain. ``a1``/``a2``
    parametrize the data utility.
    """

    g: float = 1e9
    B: float = 60e6
    alpha: float = 2.0
    eta: float = 0.6
    Gamma: float = 1e-3
    h: float = 10.0
    a1: float = 1e4
    a2: float = 200.0
    task_area: Rect = field(default_factory=lambda: Rect(0.0, 200.0, 0.0, 200.0))

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError("g must be positive")
        if not self.B > 0:
            raise ValueError("B must be positive")
        if not self.alpha >= 2:
            raise ValueError("alpha must be >= 2")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not self.Gamma > 0:
            raise ValueError("Gamma must be positive")
        if not self.h >= 0:
            raise ValueError("h must be nonnegative")
        if not (self.a1 > 0 and self.a2 > 0):
            raise ValueError("a1 and a2 must be positive")
        if self.task_area.width <= 0 or self.task_area.height <= 0:
            raise ValueError("task area is degenerate")

    @property
    def kappa(self) -> float:
        return 1.0 / (self.eta * self.Gamma)

    @classmethod
    def from_db(cls, g_db: float = 90.0, Gamma_db: float = -30.0, **kwargs) -> "SystemConfig":
        return cls(g=db_to_linear(g_db), Gamma=db_to_linear(Gamma_db), **kwargs)

    @classmethod
    def simulation_defaults(cls, **overrides) -> "SystemConfig":
        """The simulation defaults: 200 m square, h=10 m, g=90 dB, B=60 MHz,
        a1=1e4, a2=200, eta=0.6, Gamma=-30 dB, alpha=2."""
        params = dict(g_db=90.0, Gamma_db=-30.0, B=60e6, alpha=2.0, eta=0.6,
                      h=10.0, a1=1e4, a2=200.0,
                      task_area=Rect(0.0, 200.0, 0.0, 200.0))
        params.update(overrides)
        return cls.from_db(**params)


def worst_case_distance(working_area: Rect, task_area: Rect, h: float) -> float:
    """Largest worker-to-BS distance over working-area and task-area points.

    The squared planar distance is convex, so the maximum over two
    rectangles is attained at a pair of corners.
    """
    wc = working_area.corners[:, None, :]
    tc = task_area.corners[None, :, :]
    planar2 = ((wc - tc) ** 2).sum(axis=-1).max()
    return math.sqrt(planar2 + h * h)


@dataclass(frozen=True)
class Worker:
    id: int
    b: float
    location: tuple[float, float]
    working_area: Rect
    D: float

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"worker {self.id}: b must be positive")
        if not self.working_area.contains(self.location, tol=1e-9):
            raise ValueError(f"worker {self.id}: location outside working area")

    @classmethod
    def create(cls, id: int, b: float, working_area: Rect, cfg: SystemConfig,
               location=None) -> "Worker":
        if location is None:
            location = ((working_area.xmin + working_area.xmax) / 2,
                        (working_area.ymin + working_area.ymax) / 2)
        D = worst_case_distance(working_area, cfg.task_area, cfg.h)
        return cls(int(id), float(b), (float(location[0]), float(location[1])),
                   working_area, D)


@dataclass(frozen=True)
class AllocationOutcome:
    """Stackelberg-equilibrium result for one worker population.

    ``ids`` and ``rates`` are aligned; ``shares`` is the charging power
    each worker receives, proportional to its rate.
    """

    p_c: float
    ids: tuple[int, ...]
    rates: np.ndarray
    employed: frozenset = frozenset()

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.shape != (len(self.ids),):
            raise ValueError("rates and ids are misaligned")
        if np.any(rates < 0):
            raise ValueError("rates must be nonnegative")
        object.__setattr__(self, "rates", rates)

    @property
    def shares(self) -> np.ndarray:
        total = self.rates.sum()
        if total <= 0:
            return np.zeros_like(self.rates)
        return self.rates / total * self.p_c

    def rate_of(self, worker_id: int) -> float:
        return float(self.rates[self._index(worker_id)])

    def share_of(self, worker_id: int) -> float:
        return float(self.shares[self._index(worker_id)])

    def _index(self, worker_id: int) -> int:
        try:
            return self.ids.index(worker_id)
        except ValueError:
            raise KeyError(f"unknown worker id {worker_id}") from None

    def employed_ids(self) -> list[int]:
        return [i for i in self.ids if i in self.employed]


@dataclass(frozen=True)
class DeploymentInstance:
    """Weighted point set fed to a deployment mechanism."""

    points: np.ndarray
    weights: np.ndarray
    config: SystemConfig

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(pts) < 1 or len(pts) != len(w):
            raise ValueError("points and weights must be nonempty and aligned")
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative and not all zero")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.points)

    def with_points(self, points) -> "DeploymentInstance":
        return DeploymentInstance(points, self.weights, self.config)


def deployment_weights(outcome: AllocationOutcome, cfg: SystemConfig,
                       ids: Sequence[int] | None = None) -> np.ndarray:
    """Cost weights ``(r_i / sum r) * P_c * kappa`` for the given worker ids."""
    if ids is None:
        ids = outcome.employed_ids()
    shares = outcome.shares
    return np.array([shares[outcome._index(i)] for i in ids]) * cfg.kappa


# --- per-link formulas -----------------------------------------------------

def distance(worker_loc, bs_loc, h: float) -> float:
    dx = worker_loc[0] - bs_loc[0]
    dy = worker_loc[1] - bs_loc[1]
    return math.sqrt(dx * dx + dy * dy + h * h)


def transmission_power(r: float, d: float, cfg: SystemConfig) -> float:
    return math.expm1(r / cfg.B * LN2) * d ** cfg.alpha / cfg.g


def worker_power_cost(r: float, d: float, b: float, cfg: SystemConfig) -> float:
    return transmission_power(r, d, cfg) + b * r


def bs_charging_cost(p_received: float, d: float, cfg: SystemConfig) -> float:
    return p_received * d ** cfg.alpha * cfg.kappa


def data_utility(rates: Iterable[float], cfg: SystemConfig) -> float:
    r = np.asarray(list(rates) if not isinstance(rates, np.ndarray) else rates, dtype=float)
    return cfg.a1 * math.log1p(float(np.log1p(cfg.a2 * r).sum()))


# --- phase utilities -------------------------------------------------------

def _shares(rates: np.ndarray, p_c: float) -> np.ndarray:
    total = rates.sum()
    if total <= 0:
        return np.zeros_like(rates)
    return rates / total * p_c


def platform_utility_phase1(p_c: float, rates, workers: Sequence[Worker],
                            cfg: SystemConfig) -> float:
    r = np.asarray(rates, dtype=float)
    if len(r) != len(workers):
        raise ValueError("rates and workers are misaligned")
    D = np.array([w.D for w in workers], dtype=float)
    power_cost = float((_shares(r, p_c) * D ** cfg.alpha).sum()) * cfg.kappa
    return data_utility(r, cfg) - power_cost


def worker_utility_phase1(i: int, rates, p_c: float, workers: Sequence[Worker],
                          cfg: SystemConfig) -> float:
    """Utility of the worker at position ``i`` planning for its worst-case distance."""
    r = np.asarray(rates, dtype=float)
    ri = float(r[i])
    total = float(r.sum())
    share = ri / total * p_c if total > 0 else 0.0
    return share - worker_power_cost(ri, workers[i].D, workers[i].b, cfg)


def _worker_by_id(workers: Sequence[Worker], worker_id: int) -> Worker:
    for w in workers:
        if w.id == worker_id:
            return w
    raise KeyError(f"unknown worker id {worker_id}")


def worker_utility_phase2(worker_id: int, bs_loc, outcome: AllocationOutcome,
                          workers: Sequence[Worker], cfg: SystemConfig,
                          location=None) -> float:
    """Realized utility once the BS sits at ``bs_loc``.

    ``location`` defaults to the worker's true location.
    """
    w = _worker_by_id(workers, worker_id)
    loc = w.location if location is None else location
    r = outcome.rate_of(worker_id)
    d = distance(loc, bs_loc, cfg.h)
    return outcome.share_of(worker_id) - worker_power_cost(r, d, w.b, cfg)


# --- deployment cost -------------------------------------------------------

def platform_cost_phase2(bs_loc, instance: DeploymentInstance) -> float:
    cfg = instance.config
    diff = instance.points - np.asarray(bs_loc, dtype=float)
    d2 = (diff ** 2).sum(axis=1) + cfg.h ** 2
    return float((instance.weights * d2 ** (cfg.alpha / 2)).sum())


def platform_cost_gradient(bs_loc, instance: DeploymentInstance) -> np.ndarray:
    cfg = instance.config
    diff = np.asarray(bs_loc, dtype=float) - instance.points
    d2 = (diff ** 2).sum(axis=1) + cfg.h ** 2
    coef = instance.weights * cfg.alpha * d2 ** (cfg.alpha / 2 - 1)
    return (coef[:, None] * diff).sum(axis=0)


def batch_cost(bs, points, weights, h: float, alpha: float) -> np.ndarray:
    """Vectorized deployment cost.

    ``bs`` is ``(G, 2)``, ``points`` ``(G, N, 2)``, ``weights`` ``(N,)`` or
    ``(G, N)``; returns ``(G,)``.
    """
    diff = points - bs[:, None, :]
    d2 = (diff ** 2).sum(axis=-1) + h * h
    if alpha == 2:
        return (weights * d2).sum(axis=-1)
    return (weights * d2 ** (alpha / 2)).sum(axis=-1)


def batch_cost_gradient(bs, points, weights, h: float, alpha: float) -> np.ndarray:
    diff = bs[:, None, :] - points
    d2 = (diff ** 2).sum(axis=-1) + h * h
    coef = weights * alpha * d2 ** (alpha / 2 - 1)
    return (coef[..., None] * diff).sum(axis=1)
