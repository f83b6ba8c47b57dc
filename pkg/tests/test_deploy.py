from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wpcrowd.deploy import (AUDIT_ABS_TOL, MechanismKind, approx_bound_check, approx_ratio_bound,
                            default_deviation_grid, expected_med_cost_uniform, med, med_batch,
                            msc, msc_batch, msc_constant, msc_expected_cost_n3, opt_deploy,
                            opt_deploy_batch, performance_ratios, performance_ratios_batch,
                            strategyproofness_audit)
from wpcrowd.model import (AllocationOutcome, DeploymentInstance, Rect, SystemConfig, Worker,
                           batch_cost)

UNIT = Rect(0.0, 1.0, 0.0, 1.0)


def cfg_unit(alpha=2.0, h=0.1):
    return SystemConfig(g=1.0, B=1.0, alpha=alpha, eta=0.5, Gamma=1.0, h=h, a1=1.0, a2=1.0,
                        task_area=UNIT)


def cost(p, pts, w, h, alpha):
    d2 = ((pts - np.asarray(p)) ** 2).sum(-1) + h * h
    return float((w * d2 ** (alpha / 2)).sum())


# --- medians ---------------------------------------------------------------

def test_med_examples():
    assert np.array_equal(med([(3, 4)]), [3, 4])
    assert np.array_equal(med([(0, 0), (1, 0), (0, 1)]), [0, 0])
    assert np.array_equal(med([(0, 0), (2, 2)], "paper_average"), [1, 1])
    assert np.array_equal(med([(0, 0), (2, 2)], "lower_median"), [0, 0])
    with pytest.raises(ValueError):
        med(np.zeros((0, 2)))


def test_msc_examples():
    pts = [(0.1, 0.0), (0.2, 0.0), (0.9, 0.0)]
    assert msc(pts, (0.5, 0.5))[0] == pytest.approx(0.35)
    assert np.allclose(msc([(0.2, 0.8)], (0.6, 0.4)), [0.4, 0.6])
    odd = [(0.1, 0.3), (0.4, 0.9), (0.7, 0.2)]
    assert np.array_equal(msc(odd, (0.4, 0.9)), med(odd + [(0.4, 0.9)]))
    with pytest.raises(ValueError):
        MechanismKind("MSC", constant=(np.nan, 0.0))


def test_med_matches_numpy_median_for_odd_counts():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (200, 5, 2))
    assert np.array_equal(med_batch(pts), np.median(pts, axis=1))


pts_st = st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=9)


@settings(max_examples=300)
@given(pts_st, st.sampled_from(["paper_average", "lower_median"]),
       st.tuples(st.floats(0, 1), st.floats(0, 1)), st.randoms(use_true_random=False))
def test_median_range_and_anonymity(pts, rule, const, rnd):
    p = np.array(pts)
    perm = list(range(len(p)))
    rnd.shuffle(perm)
    for f, aug in ((lambda q: med(q, rule), p), (lambda q: msc(q, const, rule), np.vstack([p, const]))):
        out = f(p)
        assert np.all(out >= aug.min(0) - 1e-15) and np.all(out <= aug.max(0) + 1e-15)
        assert np.array_equal(out, f(p[perm]))


@settings(max_examples=1000)
@given(pts_st, st.integers(0, 8), st.floats(0, 0.5), st.sampled_from(["paper_average", "lower_median"]))
def test_median_per_axis_monotone(pts, k, delta, rule):
    p = np.array(pts)
    k %= len(p)
    q = p.copy()
    q[k, 0] += delta
    assert med(q, rule)[0] >= med(p, rule)[0]
    assert msc(q, (0.5, 0.5), rule)[0] >= msc(p, (0.5, 0.5), rule)[0]


# --- OPT -------------------------------------------------------------------

def test_opt_examples():
    cfg = cfg_unit()
    single = DeploymentInstance(np.array([[0.3, 0.7]]), np.array([2.0]), cfg)
    assert np.allclose(opt_deploy(single), [0.3, 0.7])
    two = DeploymentInstance(np.array([[0.0, 0.0], [2.0, 0.0]]), np.ones(2),
                             SystemConfig(g=1, B=1, eta=0.5, Gamma=1, h=0.0,
                                          task_area=Rect(0, 2, 0, 2)))
    assert np.allclose(opt_deploy(two), [1.0, 0.0])


def test_opt_alpha2_is_weighted_centroid():
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 1, (20, 7, 2))
    w = rng.uniform(0.1, 3, (20, 7))
    out = opt_deploy_batch(pts, w, cfg_unit())
    assert np.allclose(out, (w[..., None] * pts).sum(1) / w.sum(1)[:, None])


def grid_argmin(pts, w, h, alpha, n=400):
    xs = np.linspace(0, 1, n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    G = np.stack([X.ravel(), Y.ravel()], 1)
    c = (w * (((G[:, None, :] - pts) ** 2).sum(-1) + h * h) ** (alpha / 2)).sum(1)
    best = G[np.argmin(c)]
    # one refinement around the coarse optimum
    step = xs[1] - xs[0]
    fx = np.linspace(best[0] - step, best[0] + step, n // 4)
    fy = np.linspace(best[1] - step, best[1] + step, n // 4)
    X, Y = np.meshgrid(np.clip(fx, 0, 1), np.clip(fy, 0, 1), indexing="ij")
    G = np.stack([X.ravel(), Y.ravel()], 1)
    c = (w * (((G[:, None, :] - pts) ** 2).sum(-1) + h * h) ** (alpha / 2)).sum(1)
    return G[np.argmin(c)]


@pytest.mark.parametrize("seed", range(5))
def test_opt_alpha3_matches_grid_search(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 1, (3, 2))
    w = rng.uniform(0.5, 2, 3)
    inst = DeploymentInstance(pts, w, cfg_unit(alpha=3.0))
    assert np.max(np.abs(opt_deploy(inst) - grid_argmin(pts, w, 0.1, 3.0))) <= 1e-3


@settings(max_examples=100)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([2.4, 3.0, 4.0]))
def test_opt_not_beaten_by_perturbations(seed, alpha):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    pts = rng.uniform(0, 1, (n, 2))
    w = rng.uniform(0.1, 2, n)
    cfg = cfg_unit(alpha=alpha)
    x = opt_deploy(DeploymentInstance(pts, w, cfg))
    base = cost(x, pts, w, cfg.h, alpha)
    for d in rng.normal(0, 1e-3, (20, 2)):
        y = np.clip(x + d, 0, 1)
        assert cost(y, pts, w, cfg.h, alpha) >= base * (1 - 1e-9)


# --- ratios ----------------------------------------------------------------

def test_opt_ratios_are_one():
    cfg = cfg_unit(alpha=3.0)
    rng = np.random.default_rng(2)
    insts = [DeploymentInstance(rng.uniform(0, 1, (4, 2)), rng.uniform(0.5, 1, 4), cfg)
             for _ in range(5)]
    avg, wst = performance_ratios(MechanismKind("OPT"), insts)
    assert avg == pytest.approx(1.0) and wst == pytest.approx(1.0)


def test_med_ratio_hand_computed():
    cfg = cfg_unit(h=0.0)
    a = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    b = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    w = np.ones(3)
    insts = [DeploymentInstance(a, w, cfg), DeploymentInstance(b, w, cfg)]
    # med(a) = (0,0): cost 2; opt(a) = (1/3,1/3): cost 4/3
    # med(b) = (1,0): cost 1; opt(b) = (2/3,0): cost 2/3
    avg, wst = performance_ratios(MechanismKind("MED"), insts)
    assert avg == pytest.approx((2 + 1) / (4 / 3 + 2 / 3))
    assert wst == pytest.approx(1.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["MED", "MEAN", "MSC"]))
def test_ratios_at_least_one(seed, tag):
    rng = np.random.default_rng(seed)
    cfg = cfg_unit(alpha=float(rng.choice([2.0, 3.0])))
    pts = rng.uniform(0, 1, (10, 5, 2))
    w = rng.uniform(0.1, 1, 5)
    mech = MechanismKind(tag, constant=(0.5, 0.5) if tag == "MSC" else None)
    res = performance_ratios_batch(mech, pts, w, cfg)
    assert res["omega_wst"] >= res["omega_avg"] - 1e-12
    assert res["omega_avg"] >= 1 - 1e-9


# --- closed forms and Monte Carlo -----------------------------------------

def test_expected_med_cost_examples():
    assert expected_med_cost_uniform(3, 0.0, 1.0, 1.0) == pytest.approx(2 / 15)
    assert expected_med_cost_uniform(1, 0.0, 1.0, 1.0) == 0.0
    assert expected_med_cost_uniform(4, 0.0, 1.0, 1.0) == pytest.approx(2 / 15)


def test_msc_expected_cost_examples():
    assert msc_expected_cost_n3((0.5, 0.5), 0.0, 1.0, 1.0) == pytest.approx(19 / 160)
    assert msc_expected_cost_n3((0.0, 0.0), 0.0, 1.0, 1.0) == pytest.approx(3 / 20)
    assert msc_expected_cost_n3((1.0, 1.0), 0.0, 1.0, 1.0) == pytest.approx(3 / 20)


def _uniform_draws(n, seed, size=100_000):
    return np.random.default_rng(seed).uniform(0, 1, (size, n, 2))


@pytest.mark.parametrize("n", [3, 5])
def test_med_monte_carlo_matches_closed_form(n):
    pts = _uniform_draws(n, n)
    w = np.full(n, 1.0 / n)   # unit rates: each worker carries 1/N of P*kappa
    mc = batch_cost(med_batch(pts), pts, w, 0.0, 2.0).mean()
    assert mc == pytest.approx(expected_med_cost_uniform(n, 0.0, 1.0, 1.0), rel=0.01)


@pytest.mark.parametrize("const", [(0.5, 0.5), (0.25, 0.75)])
def test_msc_monte_carlo_matches_closed_form(const):
    pts = _uniform_draws(3, 11)
    w = np.full(3, 1.0 / 3)
    mc = batch_cost(msc_batch(pts, const), pts, w, 0.0, 2.0).mean()
    assert mc == pytest.approx(msc_expected_cost_n3(const, 0.0, 1.0, 1.0), rel=0.01)


def test_msc_beats_med_on_uniform_benchmark():
    pts = _uniform_draws(3, 5)
    w = np.full(3, 1.0 / 3)
    c_med = batch_cost(med_batch(pts), pts, w, 0.0, 2.0)
    c_msc = batch_cost(msc_batch(pts, (0.5, 0.5)), pts, w, 0.0, 2.0)
    diff = c_med - c_msc
    assert diff.mean() > 3 * diff.std(ddof=1) / np.sqrt(len(diff))


# --- MSC constant ----------------------------------------------------------

def test_msc_constant_symmetric_samples():
    rng = np.random.default_rng(4)
    half = rng.uniform(0, 1, (500, 3, 2))
    samples = np.concatenate([half, 1 - half])
    c = msc_constant(samples, np.ones(3), cfg_unit())
    assert np.all(np.abs(c - 0.5) <= 0.05 + 1e-12)


def test_msc_constant_uniform_n3():
    pts = _uniform_draws(3, 9)
    c = msc_constant(pts, np.ones(3), cfg_unit(h=0.0))
    assert np.all(np.abs(c - 0.5) <= 0.05 + 1e-12)


def test_msc_constant_single_sample_recovers_opt():
    # two workers: msc = clamp(constant, x1, x2), so the best constant is OPT itself
    pts = np.array([[[0.2, 0.9], [0.8, 0.3]]])
    w = np.array([1.0, 2.0])
    cfg = cfg_unit()
    opt = opt_deploy_batch(pts, w[None], cfg)[0]
    c = msc_constant(pts, w, cfg)
    assert np.all(np.abs(c - opt) <= 0.05 + 1e-12)


def test_msc_constant_rejects_empty():
    with pytest.raises(ValueError):
        msc_constant(np.zeros((0, 3, 2)), np.ones(3), cfg_unit())


# --- bounds ----------------------------------------------------------------

def test_bound_examples():
    assert approx_ratio_bound(2.0, 7, [1, 1, 1]) == 2.0
    cfg = cfg_unit()
    single = DeploymentInstance(np.array([[0.3, 0.3]]), np.array([1.0]), cfg)
    assert approx_bound_check(single, [1.0])
    with pytest.raises(ValueError):
        approx_bound_check(single, [0.0])


@pytest.mark.parametrize("alpha,n,spread", [(2.0, 5, 1.0), (4.0, 10, 2.0)])
def test_bound_holds_on_random_instances(alpha, n, spread):
    rng = np.random.default_rng(int(alpha * 10 + n))
    cfg = cfg_unit(alpha=alpha)
    for _ in range(1000):
        rates = rng.uniform(1, spread, n) if spread > 1 else np.ones(n)
        w = rates / rates.sum()
        inst = DeploymentInstance(rng.uniform(0, 1, (n, 2)), w, cfg)
        assert approx_bound_check(inst, rates)


# --- strategyproofness audit ----------------------------------------------

def audit_setup(rng, n, cfg):
    rates = rng.uniform(0.5, 1.5, n)
    ids = tuple(range(1, n + 1))
    outcome = AllocationOutcome(1.0, ids, rates, frozenset(ids))
    locs = rng.uniform(0, 1, (n, 2))
    workers = [Worker(i, 0.01, tuple(p), UNIT, 1.5) for i, p in zip(ids, locs)]
    return outcome, workers


def test_audit_truthful_report_has_no_gain():
    cfg = cfg_unit()
    outcome, workers = audit_setup(np.random.default_rng(0), 3, cfg)
    truthful_only = np.array([workers[0].location])
    rep = strategyproofness_audit(MechanismKind("MEAN"), outcome, workers, cfg, truthful_only)
    assert rep.passed and rep.max_utility_gain <= AUDIT_ABS_TOL


def test_audit_catches_mean_rule_on_a_line():
    cfg = cfg_unit()
    ids = (1, 2)
    outcome = AllocationOutcome(1.0, ids, np.ones(2), frozenset(ids))
    workers = [Worker(1, 0.01, (0.0, 0.5), UNIT, 1.5), Worker(2, 0.01, (1.0, 0.5), UNIT, 1.5)]
    grid = np.column_stack([np.linspace(-1, 2, 31), np.full(31, 0.5)])
    rep = strategyproofness_audit(MechanismKind("MEAN"), outcome, workers, cfg, grid)
    assert not rep.passed
    wid, true_loc, reported = rep.violating_case
    # the profitable lie overshoots away from the other worker
    assert (reported[0] - true_loc[0]) * (true_loc[0] - 0.5) > 0


@pytest.mark.parametrize("mech", [MechanismKind("MED", med_even_rule="lower_median"),
                                  MechanismKind("MSC", constant=(0.4, 0.6),
                                                med_even_rule="lower_median")],
                         ids=["med-lower", "msc-lower"])
def test_audit_passes_generalized_medians(mech):
    cfg = cfg_unit()
    rng = np.random.default_rng(8)
    grid = default_deviation_grid(UNIT)
    for _ in range(50):
        outcome, workers = audit_setup(rng, int(rng.integers(2, 7)), cfg)
        rep = strategyproofness_audit(mech, outcome, workers, cfg, grid)
        assert rep.passed, rep.to_dict()
        assert rep.tested_deviations == len(workers) * (len(grid) + 1)


def test_audit_flags_even_count_averaging():
    cfg = cfg_unit()
    rng = np.random.default_rng(9)
    failures = 0
    for _ in range(20):
        outcome, workers = audit_setup(rng, 4, cfg)
        rep = strategyproofness_audit(MechanismKind("MED"), outcome, workers, cfg)
        failures += not rep.passed
    assert failures > 0


def test_mechanism_kind_validation():
    with pytest.raises(ValueError):
        MechanismKind("XYZ")
    with pytest.raises(ValueError):
        MechanismKind("MDL")
    with pytest.raises(ValueError):
        MechanismKind("MED", med_even_rule="upper")
