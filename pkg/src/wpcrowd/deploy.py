"""Mobile-BS deployment mechanisms, the cost-optimal baseline, and audits.

Mechanisms take reported locations and return a BS location. MED and MSC
are coordinate-wise (generalized) medians; OPT minimizes the platform's
deployment cost and ignores incentives; MDL wraps a trained
:class:`wpcrowd.mdl.MdlModel`.

Batched helpers operate on ``(G, N, 2)`` arrays of point sets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .model import (LN2, AllocationOutcome, DeploymentInstance, Rect,
                    SystemConfig, Worker, batch_cost, batch_cost_gradient,
                    deployment_weights)

MED_RULES = ("paper_average", "lower_median")
AUDIT_REL_TOL = 1e-9
AUDIT_ABS_TOL = 1e-12


# --- generalized medians ---------------------------------------------------

def _median_sorted(s: np.ndarray, rule: str) -> np.ndarray:
    n = s.shape[-1]
    if n % 2:
        return s[..., n // 2]
    if rule == "paper_average":
        return 0.5 * (s[..., n // 2 - 1] + s[..., n // 2])
    if rule == "lower_median":
        return s[..., n // 2 - 1]
    raise ValueError(f"unknown even-count rule {rule!r}; expected one of {MED_RULES}")


def med_batch(points, rule: str = "paper_average") -> np.ndarray:
    """Coordinate-wise median of each point set in a ``(G, N, 2)`` batch."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[-2] == 0:
        raise ValueError("median of an empty location set")
    return _median_sorted(np.sort(pts, axis=-2).swapaxes(-1, -2), rule)


def med(locations, rule: str = "paper_average") -> np.ndarray:
    pts = np.asarray(locations, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("median of an empty location set")
    return med_batch(pts[None], rule)[0]


def msc_batch(points, constant, rule: str = "paper_average") -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.shape[-2] == 0:
        raise ValueError("median of an empty location set")
    c = np.broadcast_to(np.asarray(constant, dtype=float), pts.shape[:-2] + (1, 2))
    return med_batch(np.concatenate([pts, c], axis=-2), rule)


def msc(locations, constant, rule: str = "paper_average") -> np.ndarray:
    """Median of the reports augmented with one fixed constant point."""
    pts = np.asarray(locations, dtype=float).reshape(-1, 2)
    return msc_batch(pts[None], constant, rule)[0]


def mean_of_reports_batch(points) -> np.ndarray:
    """Plain average of reports; manipulable, used as a negative control."""
    return np.asarray(points, dtype=float).mean(axis=-2)


# --- cost-optimal deployment -----------------------------------------------

def _hessian(bs, points, weights, h, alpha):
    diff = bs[:, None, :] - points
    d2 = (diff ** 2).sum(axis=-1) + h * h
    c1 = weights * alpha * d2 ** (alpha / 2 - 1)
    c2 = weights * alpha * (alpha - 2) * d2 ** (alpha / 2 - 2)
    H = c1.sum(axis=1)[:, None, None] * np.eye(2)
    H = H + np.einsum("gn,gni,gnj->gij", c2, diff, diff)
    return H


def _projected_gradient(x, grad, lower, upper):
    pg = grad.copy()
    pg[(x <= lower) & (grad > 0)] = 0.0
    pg[(x >= upper) & (grad < 0)] = 0.0
    return pg


def opt_deploy_batch(points, weights, cfg: SystemConfig,
                     max_iter: int = 10_000) -> np.ndarray:
    """Cost-minimizing BS locations for a batch of weighted point sets.

    For ``alpha == 2`` the minimizer is the weighted centroid. Otherwise a
    projected descent with Newton-scaled directions and Armijo
    backtracking runs until the projected gradient norm drops below
    ``1e-8 * sum(w) * scale**(alpha - 1)``.
    """
    pts = np.asarray(points, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), pts.shape[:-1])
    area, h, alpha = cfg.task_area, cfg.h, cfg.alpha
    lower, upper = area.lower, area.upper
    x = (w[..., None] * pts).sum(axis=1) / w.sum(axis=1)[:, None]
    x = np.clip(x, lower, upper)
    if alpha == 2:
        return x

    tol = 1e-8 * w.sum(axis=1) * area.scale ** (alpha - 1)
    active = np.ones(len(x), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        xa, pa, wa = x[idx], pts[idx], w[idx]
        grad = batch_cost_gradient(xa, pa, wa, h, alpha)
        pg = _projected_gradient(xa, grad, lower, upper)
        done = np.linalg.norm(pg, axis=1) <= tol[idx]
        H = _hessian(xa, pa, wa, h, alpha)
        direction = -np.linalg.solve(H, grad[..., None])[..., 0]
        f0 = batch_cost(xa, pa, wa, h, alpha)
        t = np.ones(len(idx))
        moved = np.zeros(len(idx), dtype=bool)
        cand = xa.copy()
        for _ in range(60):
            trial = np.clip(xa + t[:, None] * direction, lower, upper)
            f1 = batch_cost(trial, pa, wa, h, alpha)
            ok = (f1 <= f0 + 1e-4 * (grad * (trial - xa)).sum(axis=1)) & ~moved
            cand[ok] = trial[ok]
            moved |= ok
            if moved.all():
                break
            t = np.where(moved, t, 0.5 * t)
        stalled = ~moved | np.all(cand == xa, axis=1)
        x[idx] = cand
        active[idx[done | stalled]] = False
    return x


def opt_deploy(instance: DeploymentInstance) -> np.ndarray:
    return opt_deploy_batch(instance.points[None], instance.weights[None],
                            instance.config)[0]


# --- mechanism descriptor --------------------------------------------------

@dataclass
class MechanismKind:
    """Which deployment rule to run.

    ``tag`` is one of ``MED``, ``MSC``, ``MDL``, ``OPT`` or ``MEAN`` (the
    manipulable control). MSC needs ``constant``; MDL needs ``model``.
    """

    tag: str
    constant: tuple[float, float] | None = None
    model: Any = None
    med_even_rule: str = "paper_average"
    label: str | None = None

    def __post_init__(self):
        self.tag = self.tag.upper()
        if self.tag not in ("MED", "MSC", "MDL", "OPT", "MEAN"):
            raise ValueError(f"unknown mechanism {self.tag!r}")
        if self.med_even_rule not in MED_RULES:
            raise ValueError(f"unknown even-count rule {self.med_even_rule!r}")
        if self.tag == "MSC":
            if self.constant is None or not all(map(math.isfinite, self.constant)):
                raise ValueError("MSC needs a finite constant point")
            self.constant = (float(self.constant[0]), float(self.constant[1]))
        if self.tag == "MDL" and self.model is None:
            raise ValueError("MDL needs a model")

    @property
    def name(self) -> str:
        return self.label or self.tag

    def place_batch(self, points, weights, cfg: SystemConfig) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.tag == "MED":
            return med_batch(pts, self.med_even_rule)
        if self.tag == "MSC":
            return msc_batch(pts, self.constant, self.med_even_rule)
        if self.tag == "MEAN":
            return mean_of_reports_batch(pts)
        if self.tag == "MDL":
            return self.model.place_batch(pts)
        return opt_deploy_batch(pts, weights, cfg)

    def place(self, instance: DeploymentInstance) -> np.ndarray:
        return self.place_batch(instance.points[None], instance.weights[None],
                                instance.config)[0]


# --- performance ratios ----------------------------------------------------

def performance_ratios_batch(mechanism: MechanismKind, points, weights,
                             cfg: SystemConfig) -> dict:
    pts = np.asarray(points, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), pts.shape[:-1])
    if len(pts) == 0:
        raise ValueError("no test instances")
    opt = opt_deploy_batch(pts, w, cfg)
    opt_cost = batch_cost(opt, pts, w, cfg.h, cfg.alpha)
    if np.any(opt_cost <= 0):
        raise ZeroDivisionError("zero OPT cost; need h > 0 or spread points")
    loc = opt if mechanism.tag == "OPT" else mechanism.place_batch(pts, w, cfg)
    cost = batch_cost(loc, pts, w, cfg.h, cfg.alpha)
    ratios = cost / opt_cost
    return {
        "omega_avg": float(cost.mean() / opt_cost.mean()),
        "omega_wst": float(ratios.max()),
        "mean_cost": float(cost.mean()),
        "mean_opt_cost": float(opt_cost.mean()),
        "costs": cost,
        "opt_costs": opt_cost,
    }


def performance_ratios(mechanism: MechanismKind,
                       test_instances: Sequence[DeploymentInstance]) -> tuple[float, float]:
    """Average and worst-case cost ratio of ``mechanism`` against OPT."""
    if len(test_instances) == 0:
        raise ValueError("no test instances")
    cfg = test_instances[0].config
    sizes = {inst.n for inst in test_instances}
    if len(sizes) == 1:
        pts = np.stack([inst.points for inst in test_instances])
        w = np.stack([inst.weights for inst in test_instances])
        res = performance_ratios_batch(mechanism, pts, w, cfg)
        return res["omega_avg"], res["omega_wst"]
    costs, opts = [], []
    for inst in test_instances:
        res = performance_ratios_batch(mechanism, inst.points[None],
                                       inst.weights[None], inst.config)
        costs.append(res["mean_cost"])
        opts.append(res["mean_opt_cost"])
    costs, opts = np.array(costs), np.array(opts)
    return float(costs.mean() / opts.mean()), float((costs / opts).max())


# --- incentive audit -------------------------------------------------------

@dataclass
class AuditReport:
    mechanism: str
    tested_deviations: int
    max_utility_gain: float
    violating_case: tuple | None
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        case = None
        if self.violating_case is not None:
            wid, true_loc, rep = self.violating_case
            case = {"worker_id": int(wid), "true_location": [float(v) for v in true_loc],
                    "reported_location": [float(v) for v in rep]}
        return {"mechanism": self.mechanism, "tested_deviations": self.tested_deviations,
                "max_utility_gain": self.max_utility_gain, "violating_case": case,
                "passed": self.passed}


def default_deviation_grid(area: Rect, n: int = 21) -> np.ndarray:
    xs = np.linspace(area.xmin, area.xmax, n)
    ys = np.linspace(area.ymin, area.ymax, n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _phase2_utilities(bs, loc, share, r, b, cfg: SystemConfig) -> np.ndarray:
    d2 = ((np.asarray(bs) - np.asarray(loc)) ** 2).sum(axis=-1) + cfg.h ** 2
    tx = math.expm1(r / cfg.B * LN2) * d2 ** (cfg.alpha / 2) / cfg.g
    return share - tx - b * r


def strategyproofness_audit(mechanism: MechanismKind, outcome: AllocationOutcome,
                            workers: Sequence[Worker], cfg: SystemConfig,
                            deviation_grid=None) -> AuditReport:
    """Search each employed worker's unilateral misreports for a utility gain.

    Others report truthfully; every grid point plus the truthful location
    is tried. A worker's gain counts as a violation when it exceeds
    ``1e-9 * |truthful utility| + 1e-12``.
    """
    by_id = {w.id: w for w in workers}
    ids = outcome.employed_ids()
    if not ids:
        return AuditReport(mechanism.name, 0, 0.0, None, True)
    truthful = np.array([by_id[i].location for i in ids], dtype=float)
    weights = deployment_weights(outcome, cfg, ids)
    grid = default_deviation_grid(cfg.task_area) if deviation_grid is None \
        else np.asarray(deviation_grid, dtype=float).reshape(-1, 2)

    base = mechanism.place_batch(truthful[None], weights[None], cfg)[0]
    tested = 0
    worst_gain, worst_excess, case = -math.inf, -math.inf, None
    for k, wid in enumerate(ids):
        w = by_id[wid]
        r, share = outcome.rate_of(wid), outcome.share_of(wid)
        reports = np.vstack([truthful[k], grid])
        batch = np.repeat(truthful[None], len(reports), axis=0)
        batch[:, k] = reports
        placed = mechanism.place_batch(batch, weights[None], cfg)
        u_true = float(_phase2_utilities(base, w.location, share, r, w.b, cfg))
        u_dev = _phase2_utilities(placed, w.location, share, r, w.b, cfg)
        gains = u_dev - u_true
        j = int(np.argmax(gains))
        tested += len(reports)
        excess = gains[j] - (AUDIT_REL_TOL * abs(u_true) + AUDIT_ABS_TOL)
        worst_gain = max(worst_gain, float(gains[j]))
        if excess > worst_excess:
            worst_excess = float(excess)
            case = (wid, tuple(w.location), tuple(reports[j]))
    passed = worst_excess <= 0
    return AuditReport(mechanism.name, tested, worst_gain,
                       None if passed else case, passed,
                       {"workers": len(ids), "grid_points": len(grid)})


# --- worst-case and Bayesian analysis --------------------------------------

def approx_ratio_bound(alpha: float, n: int, rates) -> float:
    r = np.asarray(rates, dtype=float)
    return 2 ** (alpha / 2) * n ** (alpha / 2 - 1) * r.max() / r.min()


def approx_bound_check(instance: DeploymentInstance, rates, rule: str = "paper_average",
                       slack: float = 1e-6) -> bool:
    """Check the MED-vs-OPT worst-case cost ratio bound on one instance."""
    r = np.asarray(rates, dtype=float)
    if np.any(r <= 0) or len(r) != instance.n:
        raise ValueError("need one positive rate per point")
    cfg = instance.config
    pts, w = instance.points[None], instance.weights[None]
    med_cost = batch_cost(med_batch(pts, rule), pts, w, cfg.h, cfg.alpha)[0]
    opt_cost = batch_cost(opt_deploy_batch(pts, w, cfg), pts, w, cfg.h, cfg.alpha)[0]
    return med_cost <= approx_ratio_bound(cfg.alpha, instance.n, r) * opt_cost * (1 + slack)


def expected_med_cost_uniform(n: int, h: float, p_c: float, kappa: float) -> float:
    """Expected MED cost for i.i.d. uniform workers on the unit square, alpha=2."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n % 2 == 0:
        spread = (n - 1) * (n + 4) / (6 * (n + 1) * (n + 2))
    else:
        spread = (n - 1) * (n + 3) / (6 * n * (n + 2))
    return p_c * kappa * (spread + h * h)


def msc_expected_cost_n3(constant, h: float, p_c: float, kappa: float) -> float:
    """Expected MSC cost for three uniform workers on the unit square, alpha=2."""
    xc, yc = constant
    poly = (-(xc ** 4 + yc ** 4) / 4 + (xc ** 3 + yc ** 3) / 2
            - (xc ** 2 + yc ** 2) / 4 + 3 / 20)
    return p_c * kappa * (poly + h * h)


def msc_constant(samples, weights, cfg: SystemConfig, grid: int = 21,
                 rule: str = "paper_average") -> np.ndarray:
    """Grid-search the MSC constant minimizing the mean cost over samples.

    ``samples`` is ``(G, N, 2)`` in the task area's units; ``weights`` is
    ``(N,)`` or ``(G, N)``. Ties go to the first grid point in x-major order.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 3 or len(pts) == 0:
        raise ValueError("need a nonempty (G, N, 2) sample array")
    w = np.broadcast_to(np.asarray(weights, dtype=float), pts.shape[:-1])
    area = cfg.task_area
    cxs = np.linspace(area.xmin, area.xmax, grid)
    cys = np.linspace(area.ymin, area.ymax, grid)

    def axis_outputs(vals, consts):
        out = np.empty((len(consts), len(vals)))
        for a, c in enumerate(consts):
            aug = np.concatenate([vals, np.full((len(vals), 1), c)], axis=1)
            out[a] = _median_sorted(np.sort(aug, axis=1), rule)
        return out

    xm = axis_outputs(pts[..., 0], cxs)
    ym = axis_outputs(pts[..., 1], cys)
    dy2 = (ym[:, :, None] - pts[None, :, :, 1]) ** 2
    best, best_cost = None, math.inf
    for a in range(grid):
        dx2 = (xm[a][:, None] - pts[:, :, 0]) ** 2
        d2 = dx2[None] + dy2 + cfg.h ** 2
        per = d2 if cfg.alpha == 2 else d2 ** (cfg.alpha / 2)
        mean_cost = (w[None] * per).sum(axis=-1).mean(axis=-1)
        b = int(np.argmin(mean_cost))
        if mean_cost[b] < best_cost:
            best_cost, best = float(mean_cost[b]), (cxs[a], cys[b])
    return np.array(best)
