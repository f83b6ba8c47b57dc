from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from wpcrowd.cli import main
from wpcrowd.harness import (ConfigError, MechanismSpec, StageError, load_config,
                             metrics_csv_text, parse_overrides, run_pipeline, sig, stage_rng)
from wpcrowd.model import deployment_weights

SMALL = {
    "system": {"g_db": "0", "gamma_db": "0", "bandwidth": "1", "h": "0.1", "area": "0 1 0 1",
               "a1": "10", "a2": "10"},
    "workers": {"count": "5", "b_min": "0.05", "b_max": "0.1"},
    "data": {"kind": "gaussian_mixture", "centers": "0.25 0.3; 0.75 0.7", "sd": "0.08",
             "samples": "200"},
    "mechanisms": {"list": "OPT, MED:lower_median, MDL, MEAN"},
    "train": {"epochs": "2", "J": "3", "K": "3"},
    "audit": {"instances": "3", "grid": "7"},
}


def small(tmp_path, **sections):
    over = {k: dict(v) for k, v in SMALL.items()}
    for name, items in sections.items():
        over.setdefault(name, {}).update(items)
    over.setdefault("run", {})["out"] = str(tmp_path / "out")
    return load_config(None, over)


def cli_args(tmp_path, out="out", **sections):
    merged = {k: dict(v) for k, v in SMALL.items()}
    for name, items in sections.items():
        merged.setdefault(name, {}).update(items)
    args = [f"--{s}.{k}={v}" for s, items in merged.items() for k, v in items.items()]
    return args + ["--out", str(tmp_path / out)]


# --- config ----------------------------------------------------------------

def test_defaults_load():
    cfg = load_config()
    assert cfg.n_workers == 40 and cfg.system.g == pytest.approx(1e9)
    assert cfg.system.Gamma == pytest.approx(1e-3)
    assert [m.name for m in cfg.mechanisms] == ["OPT", "MED", "MSC", "MDL"]
    assert not cfg.random_split and cfg.train_fraction == 0.8


def test_config_file_and_override_precedence(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[workers]\ncount = 7\n[run]\nseed = 3\n")
    cfg = load_config(ini, parse_overrides(["--workers.count=9"]))
    assert cfg.n_workers == 9 and cfg.seed == 3


@pytest.mark.parametrize("over", [{"bogus": {"x": "1"}}, {"system": {"nope": "1"}},
                                  {"workers": {"count": "many"}},
                                  {"mechanisms": {"list": "OPT, FOO"}},
                                  {"mechanisms": {"list": "MED:middle"}}])
def test_bad_config_raises(over):
    with pytest.raises(ConfigError):
        load_config(None, over)


def test_parse_overrides_rejects_garbage():
    assert parse_overrides(["--a.b=c d"]) == {"a": {"b": "c d"}}
    for bad in (["--ab=c"], ["--a.b"], ["stray"]):
        with pytest.raises(ConfigError):
            parse_overrides(bad)


def test_mechanism_spec_names():
    assert MechanismSpec.parse(" med : lower_median ").name == "MED:lower_median"
    assert MechanismSpec.parse("MSC").name == "MSC"


def test_stage_seeds_are_independent_and_stable():
    a = stage_rng(5, "data").random(4)
    assert np.array_equal(a, stage_rng(5, "data").random(4))
    assert not np.array_equal(a, stage_rng(5, "train").random(4))
    assert not np.array_equal(a, stage_rng(6, "data").random(4))


def test_sig_rounds_to_twelve_digits():
    assert sig(1 / 3) == float("0.333333333333")
    assert sig(0.0) == 0.0


# --- pipeline --------------------------------------------------------------

def test_opt_only_ratios_are_one(tmp_path):
    state = run_pipeline(small(tmp_path, mechanisms={"list": "OPT"}, audit={"instances": "0"}))
    (row,) = state.metrics
    assert row["omega_avg"] == pytest.approx(1.0, abs=1e-12)
    assert row["omega_wst"] == pytest.approx(1.0, abs=1e-12)


def test_empty_mechanism_list_gives_header_only_csv(tmp_path):
    run_pipeline(small(tmp_path, mechanisms={"list": ""}))
    text = (tmp_path / "out" / "metrics.csv").read_text()
    assert text == "name,omega_avg,omega_wst,mean_cost,audit\n"
    assert metrics_csv_text([], []) == text


def test_full_pipeline_outputs(tmp_path):
    cfg = small(tmp_path)
    state = run_pipeline(cfg)
    out = tmp_path / "out"
    for name in ("allocation.json", "samples.csv", "labels.csv", "model.txt", "loss_curve.csv",
                 "audit.json", "metrics.json", "metrics.csv"):
        assert (out / name).is_file(), name
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert [r["name"] for r in rows] == ["OPT", "MED:lower_median", "MDL", "MEAN"]
    for r in rows:
        assert float(r["omega_avg"]) >= 1 - 1e-9 and float(r["omega_wst"]) >= 1 - 1e-9
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["phase1"]["employed_count"] == len(state.employed) >= 2
    assert doc["phase1"]["platform_utility"] > 0
    audits = {a["mechanism"]: a for a in json.loads((out / "audit.json").read_text())["audits"]}
    assert audits["MED:lower_median"]["passed"] and audits["MDL"]["passed"]
    assert {r["name"]: r["audit"] for r in rows}["MED:lower_median"] == "pass"
    assert not list(tmp_path.glob(".wpcrowd-*"))


def test_phase_coupling_and_sample_arity(tmp_path):
    state = run_pipeline(small(tmp_path, mechanisms={"list": "OPT"}), stop="data")
    o = state.equilibrium.outcome
    p_tilde = o.p_c
    shares = o.rates / o.rates.sum()
    expected = [shares[k] * p_tilde * state.config.system.kappa
                for k, w in enumerate(state.workers) if w.id in o.employed]
    assert np.array_equal(state.weights, deployment_weights(o, state.config.system, state.employed))
    assert np.allclose(state.weights, expected, rtol=1e-12)
    assert state.samples.samples.shape[1] == len(state.employed)
    assert len(state.train_idx) == 160 and state.train_idx.max() < state.test_idx.min()


def test_random_split_is_seeded(tmp_path):
    cfg = small(tmp_path, data={"split": "random"}, mechanisms={"list": "OPT"})
    a = run_pipeline(cfg, stop="data").train_idx
    b = run_pipeline(cfg, stop="data").train_idx
    assert np.array_equal(a, b) and not np.array_equal(a, np.arange(160))


def test_rerun_is_byte_identical(tmp_path):
    cfg = small(tmp_path)
    run_pipeline(cfg)
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    cfg.out = tmp_path / "again"
    run_pipeline(cfg)
    second = {p.name: p.read_bytes() for p in (tmp_path / "again").iterdir()}
    assert first == second


def test_stage_failure_leaves_no_outputs(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    bad = tmp_path / "corrupt.txt"
    bad.write_text("not a model\n")
    cfg = small(tmp_path, train={"model": str(bad)})
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "train"
    assert sorted(p.name for p in out.iterdir()) == ["keep.txt"]


def test_trace_pipeline(tmp_path):
    rng = np.random.default_rng(0)
    rows = ["worker_id,timestamp,x,y"]
    for t in range(0, 600, 5):
        for wid in range(1, 8):
            if wid == 7 and t % 10:
                continue
            x, y = np.clip(rng.normal(0.3 + 0.05 * wid, 0.05, 2), 0, 1)
            rows.append(f"{wid},{t},{x:.6f},{y:.6f}")
    path = tmp_path / "tr.csv"
    path.write_text("\n".join(rows) + "\n")
    cfg = small(tmp_path, data={"source": "traces", "traces": str(path), "slot": "20"},
                mechanisms={"list": "OPT, MED"})
    state = run_pipeline(cfg, stop="evaluate")
    # the sparsest worker is left out when only five are registered
    assert [w.id for w in state.workers] == [1, 2, 3, 4, 5]
    assert len(state.samples) == 30
    assert (tmp_path / "out" / "workers.csv").is_file()


# --- CLI -------------------------------------------------------------------

def test_cli_config_error_exit_code(tmp_path, capsys):
    assert main(["pipeline", "--workers.count=abc", "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["pipeline", "--config", str(tmp_path / "none.ini")]) == 2
    assert main(["ingest", "--out", str(tmp_path / "o")]) == 2
    assert main(["pipeline", "--model", str(tmp_path / "absent.txt"),
                 "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_cli_stage_failure_exit_code(tmp_path, capsys):
    bad = tmp_path / "corrupt.txt"
    bad.write_text("MDLMODEL v1 J=1 K=1 N=1\n")
    args = cli_args(tmp_path, train={"model": str(bad)})
    assert main(["pipeline"] + args) == 3
    assert "[train]" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_cli_subcommands_write_their_artifacts(tmp_path, capsys):
    assert main(["allocate"] + cli_args(tmp_path, out="a")) == 0
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == ["allocation.json"]
    assert main(["gen-data"] + cli_args(tmp_path, out="g")) == 0
    assert {"samples.csv"} <= {p.name for p in (tmp_path / "g").iterdir()}
    assert main(["train-mdl"] + cli_args(tmp_path, out="t")) == 0
    names = {p.name for p in (tmp_path / "t").iterdir()}
    assert {"model.txt", "loss_curve.csv", "labels.csv"} <= names
    assert main(["audit", "--model", str(tmp_path / "t" / "model.txt")]
                + cli_args(tmp_path, out="u")) == 0
    names = {p.name for p in (tmp_path / "u").iterdir()}
    assert "audit.json" in names and "metrics.csv" not in names
    printed = capsys.readouterr().out.split()
    assert str(tmp_path / "u" / "audit.json") in printed


def test_cli_seed_changes_outputs(tmp_path):
    base = cli_args(tmp_path, out="s1", mechanisms={"list": "OPT"})
    assert main(["gen-data", "--seed", "1"] + base) == 0
    other = cli_args(tmp_path, out="s2", mechanisms={"list": "OPT"})
    assert main(["gen-data", "--seed", "2"] + other) == 0
    assert (tmp_path / "s1" / "samples.csv").read_bytes() != (tmp_path / "s2" / "samples.csv").read_bytes()
