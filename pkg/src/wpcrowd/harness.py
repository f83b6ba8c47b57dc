"""Experiment engine: config loading, the two-phase pipeline and reports.

The pipeline runs in stages (allocate, data, label, train, evaluate,
audit, report). Every stochastic stage draws from its own generator
spawned from the root seed, so a stage's randomness does not depend on
which other stages ran.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (SampleSet, SyntheticSpec, TraceSet, build_samples, gen_synthetic,
                   ingest_traces, write_samples_csv)
from .deploy import (MED_RULES, MechanismKind, default_deviation_grid, msc_constant,
                     performance_ratios_batch, strategyproofness_audit)
from .mdl import (MdlModel, TrainSettings, init_model, label_dataset, load_model, save_model,
                  train)
from .model import (Rect, SystemConfig, Worker, deployment_weights,
                    worker_utility_phase1)
from .stackelberg import EquilibriumReport, SolverSettings, stackelberg_equilibrium

log = logging.getLogger(__name__)

STAGES = ("allocate", "data", "label", "train", "evaluate", "audit", "report")
# fixed per-stage keys for seed spawning; never renumber
STAGE_KEYS = {"workers": 1, "data": 2, "split": 3, "train": 4, "init": 5,
              "audit": 6, "sweep": 7}
MECHANISM_TAGS = ("OPT", "MED", "MSC", "MDL", "MEAN")
SIG_DIGITS = 12

DEFAULTS = {
    "system": {"g_db": "90", "gamma_db": "-30", "bandwidth": "60e6", "alpha": "2",
               "eta": "0.6", "h": "10", "a1": "1e4", "a2": "200",
               "area": "0 200 0 200"},
    "workers": {"count": "40", "b_min": "1e-4", "b_max": "1.1e-4"},
    "data": {"source": "synthetic", "traces": "", "slot": "60", "kind": "uniform",
             "centers": "", "sd": "0.05", "mix_weights": "", "assign": "iid", "rects": "",
             "samples": "30000", "train_fraction": "0.8", "split": "chronological"},
    "mechanisms": {"list": "OPT, MED, MSC, MDL", "msc_constant": "", "msc_grid": "21"},
    "solver": {"rate_tol": "1e-10", "max_iters": "500", "p_max": "", "scan_points": "33"},
    "train": {"learning_rate": "0.005", "batch": "200", "epochs": "50", "J": "8", "K": "8",
              "val_fraction": "0.1", "model": ""},
    "audit": {"instances": "50", "grid": "21"},
    "sweep": {"n": "", "instances": "1"},
    "run": {"seed": "0", "out": "results"},
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# --- config ----------------------------------------------------------------

@dataclass(frozen=True)
class MechanismSpec:
    """A configured mechanism: tag plus optional even-count median rule."""

    tag: str
    rule: str = "paper_average"

    @classmethod
    def parse(cls, text: str) -> "MechanismSpec":
        tag, _, rule = text.strip().partition(":")
        tag = tag.strip().upper()
        rule = rule.strip() or "paper_average"
        if tag not in MECHANISM_TAGS:
            raise ConfigError(f"unknown mechanism {tag!r}")
        if rule not in MED_RULES:
            raise ConfigError(f"unknown median rule {rule!r}")
        return cls(tag, rule)

    @property
    def name(self) -> str:
        return self.tag if self.rule == "paper_average" else f"{self.tag}:{self.rule}"


@dataclass
class ExperimentConfig:
    system: SystemConfig
    n_workers: int
    b_range: tuple[float, float]
    source: str
    synthetic: SyntheticSpec
    traces_path: Path | None
    slot: float
    n_samples: int
    train_fraction: float
    random_split: bool
    mechanisms: list[MechanismSpec]
    msc_constant: tuple[float, float] | None
    msc_grid: int
    solver: SolverSettings
    train: TrainSettings
    J: int
    K: int
    model_path: Path | None
    audit_instances: int
    audit_grid: int
    sweep_n: tuple[int, ...]
    sweep_instances: int
    seed: int
    out: Path
    raw: dict = field(default_factory=dict, repr=False)

    def rng(self, stage: str) -> np.random.Generator:
        return stage_rng(self.seed, stage)


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STAGE_KEYS[stage],)))


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None


def _groups(text: str, size: int, what: str) -> tuple[tuple[float, ...], ...]:
    groups = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        vals = _floats(chunk, what)
        if len(vals) != size:
            raise ConfigError(f"{what}: each entry needs {size} numbers, got {chunk!r}")
        groups.append(tuple(vals))
    return tuple(groups)


def parse_overrides(items: Sequence[str]) -> dict[str, dict[str, str]]:
    """``section.key=value`` strings to a nested dict."""
    out: dict[str, dict[str, str]] = {}
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.lstrip("-").partition(".")
        if not sep or not dot or not section or not name:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        out.setdefault(section, {})[name] = value
    return out


def load_config(path=None, overrides: dict[str, dict[str, str]] | None = None) -> ExperimentConfig:
    """Defaults, then the INI file, then overrides. Unknown keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str.lower
    parser.read_dict(DEFAULTS)

    def check(section, key):
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if key.lower() not in {k.lower() for k in DEFAULTS[section]}:
            raise ConfigError(f"unknown config key {section}.{key}")

    if path is not None:
        text_parser = configparser.ConfigParser(interpolation=None)
        text_parser.optionxform = str.lower
        try:
            with open(path, encoding="utf-8") as fh:
                text_parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section in text_parser.sections():
            for key, value in text_parser.items(section):
                check(section, key)
                parser.set(section, key, value)
    for section, items in (overrides or {}).items():
        for key, value in items.items():
            check(section, key)
            parser.set(section, key.lower(), value)
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    try:
        return _build_config(raw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _build_config(raw: dict) -> ExperimentConfig:
    s, w, d, m = raw["system"], raw["workers"], raw["data"], raw["mechanisms"]
    area_vals = _floats(s["area"], "system.area")
    if len(area_vals) != 4:
        raise ConfigError("system.area needs xmin xmax ymin ymax")
    system = SystemConfig.from_db(
        g_db=float(s["g_db"]), Gamma_db=float(s["gamma_db"]), B=float(s["bandwidth"]),
        alpha=float(s["alpha"]), eta=float(s["eta"]), h=float(s["h"]), a1=float(s["a1"]),
        a2=float(s["a2"]), task_area=Rect(*area_vals))

    b_range = (float(w["b_min"]), float(w["b_max"]))
    if not 0 < b_range[0] <= b_range[1]:
        raise ConfigError("workers.b_min/b_max must satisfy 0 < b_min <= b_max")
    n_workers = int(w["count"])
    if n_workers < 1:
        raise ConfigError("workers.count must be >= 1")

    source = d["source"].strip()
    if source not in ("synthetic", "traces"):
        raise ConfigError("data.source must be 'synthetic' or 'traces'")
    traces_path = Path(d["traces"]) if d["traces"].strip() else None
    if source == "traces" and (traces_path is None or not traces_path.exists()):
        raise ConfigError(f"trace file not found: {d['traces']!r}")
    synthetic = SyntheticSpec(
        kind=d["kind"].strip(), centers=_groups(d["centers"], 2, "data.centers"),
        sd=float(d["sd"]), mix_weights=tuple(_floats(d["mix_weights"], "data.mix_weights")),
        assign=d["assign"].strip(), rects=_groups(d["rects"], 4, "data.rects"))
    split = d["split"].strip()
    if split not in ("chronological", "random"):
        raise ConfigError("data.split must be 'chronological' or 'random'")
    train_fraction = float(d["train_fraction"])
    if not 0 < train_fraction < 1:
        raise ConfigError("data.train_fraction must lie in (0, 1)")

    mechanisms = [MechanismSpec.parse(t) for t in m["list"].split(",") if t.strip()]
    const = _floats(m["msc_constant"], "mechanisms.msc_constant")
    if const and len(const) != 2:
        raise ConfigError("mechanisms.msc_constant needs two numbers")

    sv = raw["solver"]
    solver = SolverSettings(rate_tol=float(sv["rate_tol"]), max_iters=int(sv["max_iters"]),
                            p_max=float(sv["p_max"]) if sv["p_max"].strip() else None,
                            scan_points=int(sv["scan_points"]))
    t = raw["train"]
    run = raw["run"]
    seed = int(run["seed"])
    train_settings = TrainSettings(learning_rate=float(t["learning_rate"]), batch=int(t["batch"]),
                                   epochs=int(t["epochs"]), seed=seed,
                                   val_fraction=float(t["val_fraction"]))
    model_path = Path(t["model"]) if t["model"].strip() else None
    if model_path is not None and not model_path.exists():
        raise ConfigError(f"model checkpoint not found: {model_path}")
    a, sw = raw["audit"], raw["sweep"]
    sweep_n = tuple(int(v) for v in sw["n"].replace(",", " ").split())
    if any(n < 1 for n in sweep_n):
        raise ConfigError("sweep.n entries must be >= 1")
    return ExperimentConfig(
        system=system, n_workers=n_workers, b_range=b_range, source=source,
        synthetic=synthetic, traces_path=traces_path, slot=float(d["slot"]),
        n_samples=int(d["samples"]), train_fraction=train_fraction,
        random_split=split == "random", mechanisms=mechanisms,
        msc_constant=tuple(const) if const else None, msc_grid=int(m["msc_grid"]),
        solver=solver, train=train_settings, J=int(t["j"]), K=int(t["k"]),
        model_path=model_path, audit_instances=int(a["instances"]), audit_grid=int(a["grid"]),
        sweep_n=sweep_n, sweep_instances=int(sw["instances"]), seed=seed,
        out=Path(run["out"]), raw=raw)


# --- numeric formatting ----------------------------------------------------

def sig(x: float) -> float:
    """Round to the report precision."""
    return float(f"{x:.{SIG_DIGITS}g}") if math.isfinite(x) else x


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return sig(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


# --- stages ----------------------------------------------------------------

@dataclass
class PipelineState:
    config: ExperimentConfig
    workers: list[Worker] = field(default_factory=list)
    traces: TraceSet | None = None
    equilibrium: EquilibriumReport | None = None
    samples: SampleSet | None = None
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    weights: np.ndarray | None = None
    model: MdlModel | None = None
    train_info: dict = field(default_factory=dict)
    msc_const: tuple[float, float] | None = None
    metrics: list[dict] = field(default_factory=list)
    audits: list[dict] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)

    @property
    def employed(self) -> list[int]:
        return self.equilibrium.outcome.employed_ids()


def make_workers(cfg: ExperimentConfig, traces: TraceSet | None = None) -> list[Worker]:
    """Registered workers with ``b`` drawn uniformly from the configured range."""
    rng = cfg.rng("workers")
    b = rng.uniform(cfg.b_range[0], cfg.b_range[1], cfg.n_workers)
    if traces is not None:
        ids = traces.most_recorded(cfg.n_workers)
        if len(ids) < cfg.n_workers:
            raise ValueError(f"traces hold {len(ids)} usable workers, config needs {cfg.n_workers}")
        return [traces.traces[i].worker(b[k]) for k, i in enumerate(ids)]
    area = cfg.system.task_area
    workers = []
    for k in range(cfg.n_workers):
        lo = area.denormalize(cfg.synthetic.working_area(k).lower)
        hi = area.denormalize(cfg.synthetic.working_area(k).upper)
        workers.append(Worker.create(k + 1, b[k], Rect(lo[0], hi[0], lo[1], hi[1]), cfg.system))
    return workers


def stage_allocate(state: PipelineState) -> None:
    cfg = state.config
    if cfg.source == "traces":
        state.traces = ingest_traces(cfg.traces_path, cfg.system)
    state.workers = make_workers(cfg, state.traces)
    state.equilibrium = stackelberg_equilibrium(state.workers, cfg.system, cfg.solver)
    if not state.employed:
        raise ValueError("no worker is employed at the equilibrium")


def stage_data(state: PipelineState) -> None:
    cfg = state.config
    ids = state.employed
    if cfg.source == "traces":
        state.samples = build_samples(state.traces, ids, cfg.slot, cfg.system.task_area)
    else:
        full = gen_synthetic(cfg.synthetic, cfg.n_workers, cfg.n_samples, cfg.rng("data"),
                             cfg.system.task_area)
        cols = [k for k, w in enumerate(state.workers) if w.id in set(ids)]
        state.samples = SampleSet(full.samples[:, cols], full.area, full.provenance, tuple(ids))
    g = len(state.samples)
    if g < 2:
        raise ValueError(f"need at least 2 samples, got {g}")
    n_train = min(max(int(round(cfg.train_fraction * g)), 1), g - 1)
    order = cfg.rng("split").permutation(g) if cfg.random_split else np.arange(g)
    state.train_idx = np.sort(order[:n_train])
    state.test_idx = np.sort(order[n_train:])
    state.weights = deployment_weights(state.equilibrium.outcome, cfg.system, ids)


def stage_label(state: PipelineState) -> None:
    cfg = state.config
    tags = {m.tag for m in cfg.mechanisms}
    train_pts = state.samples.samples[state.train_idx]
    if "MSC" in tags:
        if cfg.msc_constant is not None:
            state.msc_const = cfg.msc_constant
        else:
            rule = next(m.rule for m in cfg.mechanisms if m.tag == "MSC")
            c = msc_constant(cfg.system.task_area.denormalize(train_pts), state.weights,
                             cfg.system, grid=cfg.msc_grid, rule=rule)
            state.msc_const = (float(c[0]), float(c[1]))
    state.train_info["labeled"] = label_dataset(train_pts, state.weights, cfg.system)


def stage_train(state: PipelineState) -> None:
    cfg = state.config
    if "MDL" not in {m.tag for m in cfg.mechanisms}:
        return
    n = len(state.employed)
    if cfg.model_path is not None:
        state.model = load_model(cfg.model_path)
        if state.model.n != n:
            raise ValueError(f"checkpoint serves {state.model.n} workers, {n} are employed")
        return
    seed = int(cfg.rng("init").integers(2 ** 31))
    init = init_model(n, cfg.J, cfg.K, cfg.system.task_area, seed)
    result = train(state.train_info["labeled"], cfg.train, init)
    state.model = result.model
    state.train_info.update(best_epoch=result.best_epoch, steps=result.steps,
                            best_val_loss=result.curve[-1]["best_val_loss"],
                            curve=result.curve)


def _mechanism(spec: MechanismSpec, state: PipelineState) -> MechanismKind:
    return MechanismKind(spec.tag, constant=state.msc_const if spec.tag == "MSC" else None,
                         model=state.model if spec.tag == "MDL" else None,
                         med_even_rule=spec.rule, label=spec.name)


def stage_evaluate(state: PipelineState) -> None:
    cfg = state.config
    test = cfg.system.task_area.denormalize(state.samples.samples[state.test_idx])
    state.metrics = []
    for spec in cfg.mechanisms:
        res = performance_ratios_batch(_mechanism(spec, state), test, state.weights, cfg.system)
        state.metrics.append({"name": spec.name, "omega_avg": res["omega_avg"],
                              "omega_wst": res["omega_wst"], "mean_cost": res["mean_cost"],
                              "mean_opt_cost": res["mean_opt_cost"]})


def audit_instances(state: PipelineState) -> list[list[Worker]]:
    """Employed workers relocated to test samples; the working area becomes the task area."""
    cfg = state.config
    area = cfg.system.task_area
    k = min(cfg.audit_instances, len(state.test_idx))
    pick = np.sort(cfg.rng("audit").choice(state.test_idx, size=k, replace=False))
    by_id = {w.id: w for w in state.workers}
    out = []
    for g in pick:
        pts = area.denormalize(state.samples.samples[g])
        out.append([Worker(i, by_id[i].b, (float(p[0]), float(p[1])), area, by_id[i].D)
                    for i, p in zip(state.employed, pts)])
    return out


def stage_audit(state: PipelineState) -> None:
    cfg = state.config
    grid = default_deviation_grid(cfg.system.task_area, cfg.audit_grid)
    instances = audit_instances(state)
    outcome = state.equilibrium.outcome
    state.audits = []
    for spec in cfg.mechanisms:
        mech = _mechanism(spec, state)
        reports = [strategyproofness_audit(mech, outcome, ws, cfg.system, grid) for ws in instances]
        worst = max(reports, key=lambda r: r.max_utility_gain) if reports else None
        state.audits.append({
            "mechanism": spec.name, "instances": len(reports),
            "tested_deviations": sum(r.tested_deviations for r in reports),
            "max_utility_gain": worst.max_utility_gain if worst else 0.0,
            "passed": all(r.passed for r in reports),
            "violating_case": next((r.to_dict()["violating_case"] for r in reports
                                    if not r.passed), None),
        })


def phase1_summary(state: PipelineState) -> dict:
    eq = state.equilibrium
    rates = eq.outcome.rates
    utils = [worker_utility_phase1(i, rates, eq.outcome.p_c, state.workers, state.config.system)
             for i in range(len(state.workers))]
    return {"p_c": eq.outcome.p_c, "platform_utility": eq.platform_utility,
            "employed_count": len(eq.outcome.employed), "employed_ids": state.employed,
            "mean_worker_utility": float(np.mean(utils)), "converged": eq.converged,
            "iterations": eq.iterations}


# --- sweep -----------------------------------------------------------------

def sweep_workers(cfg: ExperimentConfig, ns: Sequence[int], instances: int = 1) -> dict:
    """Equilibrium utilities as the registered worker count grows.

    Each instance draws one population of ``max(ns)`` workers and uses
    its first ``n`` members, so populations are nested.
    """
    ns = sorted(set(ns))
    rng = cfg.rng("sweep")
    area = cfg.system.task_area
    totals = {n: np.zeros(3) for n in ns}
    for _ in range(instances):
        b = rng.uniform(cfg.b_range[0], cfg.b_range[1], ns[-1])
        pool = []
        for k in range(ns[-1]):
            wa = cfg.synthetic.working_area(k)
            lo, hi = area.denormalize(wa.lower), area.denormalize(wa.upper)
            pool.append(Worker.create(k + 1, b[k], Rect(lo[0], hi[0], lo[1], hi[1]), cfg.system))
        for n in ns:
            eq = stackelberg_equilibrium(pool[:n], cfg.system, cfg.solver)
            u = np.mean([worker_utility_phase1(i, eq.outcome.rates, eq.outcome.p_c, pool[:n],
                                               cfg.system) for i in range(n)])
            totals[n] += (eq.platform_utility, u, len(eq.outcome.employed))
    rows = [{"n": n, "platform_utility": t[0] / instances, "mean_worker_utility": t[1] / instances,
             "employed": t[2] / instances} for n, t in totals.items()]
    pu = [r["platform_utility"] for r in rows]
    wu = [r["mean_worker_utility"] for r in rows]
    return {"rows": rows, "instances": instances,
            "platform_utility_nondecreasing": all(a <= b for a, b in zip(pu, pu[1:])),
            "worker_utility_nonincreasing": all(a >= b for a, b in zip(wu, wu[1:]))}


# --- reports ---------------------------------------------------------------

CSV_FIELDS = ("name", "omega_avg", "omega_wst", "mean_cost", "audit")


def metrics_csv_text(metrics: list[dict], audits: list[dict]) -> str:
    passed = {a["mechanism"]: a["passed"] for a in audits}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for row in metrics:
        audit = passed.get(row["name"])
        w.writerow([row["name"]] + [f"{row[k]:.{SIG_DIGITS}g}" for k in CSV_FIELDS[1:4]]
                   + ["" if audit is None else ("pass" if audit else "fail")])
    return buf.getvalue()


def report(metrics: list[dict], audits: list[dict], out_dir, extra: dict | None = None) -> dict:
    """Write ``metrics.json`` and ``metrics.csv``; rows keep config order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    passed = {a["mechanism"]: a["passed"] for a in audits}
    rows = [dict(m, audit_passed=passed.get(m["name"])) for m in metrics]
    doc = _clean(dict(extra or {}, mechanisms=rows))
    (out_dir / "metrics.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    (out_dir / "metrics.csv").write_text(metrics_csv_text(metrics, audits), encoding="utf-8")
    return doc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2) + "\n", encoding="utf-8")


def _write_curve(path: Path, curve: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "best_val_loss"])
        for row in curve:
            w.writerow([row["epoch"]] + [f"{row[k]:.{SIG_DIGITS}g}"
                                         for k in ("train_loss", "val_loss", "best_val_loss")])


def allocation_doc(state: PipelineState) -> dict:
    o = state.equilibrium.outcome
    return {"phase1": phase1_summary(state),
            "workers": [{"id": w.id, "b": w.b, "D": w.D, "rate": float(r),
                         "employed": w.id in o.employed}
                        for w, r in zip(state.workers, o.rates)],
            "diagnostics": state.equilibrium.diagnostics}


def write_outputs(state: PipelineState, stop: str, out: Path,
                  skip: Sequence[str] = ()) -> list[str]:
    """Write the artifacts of every stage up to ``stop`` into ``out``."""
    cfg = state.config
    done = [s for s in STAGES[:STAGES.index(stop) + 1] if s not in skip]
    written = []

    def mark(name):
        written.append(name)
        return out / name

    if state.traces is not None:
        with mark("workers.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["worker_id", "records", "xmin", "xmax", "ymin", "ymax", "loc_x", "loc_y", "D"])
            for wid in state.traces.ids:
                tr = state.traces.traces[wid]
                w.writerow([wid, tr.n_records] + [f"{v:.12g}" for v in tr.working_area.as_tuple()]
                           + [f"{v:.12g}" for v in tr.location] + [f"{tr.D:.12g}"])
    if state.equilibrium is not None:
        _write_json(mark("allocation.json"), allocation_doc(state))
    if "data" in done:
        write_samples_csv(state.samples, mark("samples.csv"))
    if "label" in done:
        if state.msc_const is not None:
            _write_json(mark("msc_constant.json"), {"constant": list(state.msc_const)})
        labeled = state.train_info.get("labeled")
        if labeled is not None:
            labels = cfg.system.task_area.denormalize(labeled.labels)
            with mark("labels.csv").open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["sample", "opt_x", "opt_y"])
                for g, (x, y) in zip(state.train_idx, labels):
                    w.writerow([int(g), f"{x:.12g}", f"{y:.12g}"])
    if "train" in done and state.model is not None:
        save_model(state.model, mark("model.txt"))
        if "curve" in state.train_info:
            _write_curve(mark("loss_curve.csv"), state.train_info["curve"])
    if "audit" in done:
        _write_json(mark("audit.json"), {"audits": state.audits})
    if "evaluate" in done:
        extra = {"seed": cfg.seed, "phase1": phase1_summary(state),
                 "data": {"provenance": state.samples.provenance, "samples": len(state.samples),
                          "train": len(state.train_idx), "test": len(state.test_idx),
                          "skipped_slots": state.samples.skipped,
                          "dropped_workers": state.traces.dropped if state.traces else 0},
                 "msc_constant": list(state.msc_const) if state.msc_const else None}
        if state.model is not None and "best_epoch" in state.train_info:
            extra["training"] = {k: state.train_info[k]
                                 for k in ("best_epoch", "steps", "best_val_loss")}
        if cfg.sweep_n:
            sweep = sweep_workers(cfg, cfg.sweep_n, cfg.sweep_instances)
            extra["sweep"] = sweep
            with mark("sweep.csv").open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["n", "platform_utility", "mean_worker_utility", "employed"])
                for r in sweep["rows"]:
                    w.writerow([r["n"]] + [f"{r[k]:.12g}" for k in
                                           ("platform_utility", "mean_worker_utility", "employed")])
        report(state.metrics, state.audits, out, extra)
        written += ["metrics.json", "metrics.csv"]
    return written


STAGE_FUNCS = {"allocate": stage_allocate, "data": stage_data, "label": stage_label,
               "train": stage_train, "evaluate": stage_evaluate, "audit": stage_audit}


def run_pipeline(cfg: ExperimentConfig, stop: str = "report",
                 skip: Sequence[str] = ()) -> PipelineState:
    """Run stages in order up to ``stop`` and publish their outputs atomically.

    Files are staged in a temporary directory beside ``cfg.out`` and moved
    in only after every stage succeeded; a failure leaves ``cfg.out``
    untouched and raises :class:`StageError`.
    """
    if stop not in STAGES:
        raise ValueError(f"unknown stage {stop!r}")
    state = PipelineState(cfg)
    for name in STAGES[:STAGES.index(stop) + 1]:
        if name == "report" or name in skip:
            continue
        log.info("stage %s", name)
        try:
            STAGE_FUNCS[name](state)
        except Exception as exc:
            raise StageError(name, exc) from exc

    out = cfg.out
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".wpcrowd-", dir=out.parent))
    try:
        try:
            names = write_outputs(state, stop, tmp, skip)
        except Exception as exc:
            raise StageError("report", exc) from exc
        out.mkdir(parents=True, exist_ok=True)
        for name in names:
            (tmp / name).replace(out / name)
        state.files = {name: str(out / name) for name in names}
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return state
