"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line (visible without
``-s``) before asserting, so a red criterion still reports its numbers.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from kmtpe.driver import TrialLog, resume, run_race, run_search
from kmtpe.evalsim import BenchObjective
from kmtpe.hw import (DEFAULT_PACKING, HardwareSpec, check_packing_capacity, cost_report,
                      packed_conv_batch, packed_mac_batch)
from kmtpe.networks import preset
from kmtpe.sensitivity import check_trace_bound, hessian_exact, hutchinson_trace
from kmtpe.space import Configuration, scale_layers
from kmtpe.tinynet import TinyNet
from kmtpe.tpe import TpeParams

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
    return emit


# -- 1. model size vs the FP16 baselines ------------------------------------------------------

BASELINES_MB = {"resnet18": 23.38, "resnet20": 0.54, "mobilenet_v2": 6.8, "resnet50": 51.3}


def test_criterion1_model_size_baselines(report):
    t0 = time.perf_counter()
    rows, ok = [], True
    for name, expected in BASELINES_MB.items():
        layers = preset(name)
        mb = cost_report(layers, Configuration.uniform(len(layers), 16), HardwareSpec()).model_size_mb
        rel = abs(mb - expected) / expected
        ok &= rel <= 0.02
        rows.append(f"{name}={mb:.4f}MB({rel:+.2%})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1.0
    report(1, ok, " ".join(rows) + f" t={elapsed:.2f}s")
    assert ok


# -- 2. trace bound and Hutchinson accuracy ----------------------------------------------------


def linear_setting(d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4 * d, d)) * rng.uniform(0.2, 3.0, size=d)
    y = rng.normal(size=(4 * d, 1))
    return TinyNet.linear(rng.normal(size=(d, 1))), (x, y)


def test_criterion2_trace_bound_and_hutchinson(report):
    t0 = time.perf_counter()
    dims = [2, 4, 8, 16, 32, 64]
    violations, worst, hutch_err = 0, 0.0, 0.0
    for i, d in enumerate(dims):
        net, batch = linear_setting(d, i)
        h = hessian_exact(net, 0, batch)
        assert np.linalg.eigvalsh(h)[0] >= -1e-9 * np.trace(h)
        res = check_trace_bound(h, trials=100_000, seed=i)
        assert res.trials == 100_000 and res.applicable
        violations += res.violations
        worst = max(worst, res.max_ratio)
        est = hutchinson_trace(net, 0, batch, probes=1000, seed=i)
        hutch_err = max(hutch_err, abs(est - np.trace(h)) / np.trace(h))
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and hutch_err <= 0.05 and elapsed < 60
    report(2, ok, f"settings={len(dims)} violations={violations} max_q_over_bound={worst:.3f} "
                  f"hutchinson_max_rel_err={hutch_err:.3%} t={elapsed:.1f}s")
    assert ok


# -- 3. convergence race ------------------------------------------------------------------------


def test_criterion3_convergence_race(report):
    t0 = time.perf_counter()
    obj = BenchObjective("plateau_grid", dims=6, levels=4, flat_fraction=0.9, steps=10, seed=0)
    seeds = list(range(20))
    race = run_race(obj, ["kmeans-tpe", "classic-tpe"], seeds, n=100, params=TpeParams(n0=20, n=100))
    km, cl = race.evals_to_target("kmeans-tpe"), race.evals_to_target("classic-tpe")
    med_km, med_cl = float(np.median(list(km.values()))), float(np.median(list(cl.values())))
    ratio = med_km / med_cl
    final_km = {s: race.trajectories["kmeans-tpe"][s][-1] for s in seeds}
    final_cl = {s: race.trajectories["classic-tpe"][s][-1] for s in seeds}
    wins = np.mean([final_km[s] >= final_cl[s] for s in seeds])
    elapsed = time.perf_counter() - t0
    ok = ratio <= 0.67 and wins >= 0.6 and elapsed < 600
    report(3, ok, f"median_evals kmeans={med_km} classic={med_cl} (101 = not reached) "
                  f"ratio={ratio:.3f} final_best_win_fraction={wins:.2f} t={elapsed:.1f}s")
    assert ok


# -- 4. packed MAC exactness -------------------------------------------------------------------


def direct_conv(a, w):
    n_act, n_wt = a.shape[1], w.shape[1]
    out = np.zeros((a.shape[0], n_act + n_wt - 1), dtype=np.int64)
    for i in range(n_act):
        for j in range(n_wt):
            out[:, i + j] += a[:, i] * w[:, j]
    return out


def operand_grid(bits, count):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1))
    axes = np.meshgrid(*[np.arange(lo, hi, dtype=np.int64)] * count, indexing="ij")
    return np.stack([a.ravel() for a in axes], axis=1)


def test_criterion4_packed_mac_exactness(report):
    t0 = time.perf_counter()
    hw = HardwareSpec()
    caps = check_packing_capacity(hw)
    classified = set(caps) == set(DEFAULT_PACKING)
    cases, mismatches = 0, 0
    for bits, cap in caps.items():
        if not cap.admitted:
            continue
        n_act, n_wt, _ = cap.layout
        if bits <= 4:
            g = operand_grid(bits, n_act + n_wt)
            acts, wts = g[:, :n_act], g[:, n_act:]
            sg = operand_grid(bits, cap.single_weight + 1)
            s_acts, s_w = sg[:, :-1], sg[:, -1]
        else:
            rng = np.random.default_rng(bits)
            lo, hi = -(1 << (bits - 1)), 1 << (bits - 1)
            acts = rng.integers(lo, hi, size=(1_000_000, n_act))
            wts = rng.integers(lo, hi, size=(1_000_000, n_wt))
            s_acts = rng.integers(lo, hi, size=(1_000_000, cap.single_weight))
            s_w = rng.integers(lo, hi, size=1_000_000)
        mismatches += int(np.any(packed_conv_batch(acts, wts, bits, hw) != direct_conv(acts, wts), axis=1).sum())
        mismatches += int(np.any(packed_mac_batch(s_acts, s_w, bits, hw) != s_acts * s_w[:, None], axis=1).sum())
        cases += len(acts) + len(s_acts)
    elapsed = time.perf_counter() - t0
    admitted = sorted(b for b, c in caps.items() if c.admitted)
    ok = classified and mismatches == 0 and elapsed < 120
    report(4, ok, f"rows_classified={sorted(caps)} admitted={admitted} cases={cases} "
                  f"mismatches={mismatches} t={elapsed:.1f}s")
    assert ok


# -- 5. loop mechanics ------------------------------------------------------------------------------


def mechanics_config(out):
    return {"schema_version": 1, "seed": 0, "tpe": {"n0": 20, "n": 100},
            "net": {"hidden": [8, 8], "pretrain_epochs": 10},
            "task": {"train_count": 256, "test_count": 256},
            "evaluation": {"epochs": 1}, "output": {"dir": str(out)}}


def test_criterion5_algorithm_mechanics(report, tmp_path):
    t0 = time.perf_counter()
    a = run_search(mechanics_config(tmp_path / "a"))
    run_search(mechanics_config(tmp_path / "b"))
    run_search(mechanics_config(tmp_path / "c"), stop_after=50)
    resume(tmp_path / "c/state.json")
    ks = [t.k_used for t in a.trials if t.phase == "surrogate"]
    log_a = (tmp_path / "a/trials.jsonl").read_bytes()
    deterministic = log_a == (tmp_path / "b/trials.jsonl").read_bytes()
    resumed = log_a == (tmp_path / "c/trials.jsonl").read_bytes()
    ks_ok = ks == sorted(ks) and ks[0] == 4
    elapsed = time.perf_counter() - t0
    ok = ks_ok and deterministic and resumed and len(TrialLog.read(tmp_path / "a/trials.jsonl")) == 100 \
        and elapsed < 60
    report(5, ok, f"k_used first={ks[0]} last={ks[-1]} non_decreasing={ks == sorted(ks)} "
                  f"byte_identical={deterministic} resume_identical={resumed} t={elapsed:.1f}s")
    assert ok


# -- 6. end-to-end search --------------------------------------------------------------------------


def test_criterion6_end_to_end_search(report, tmp_path):
    t0 = time.perf_counter()
    cfg = {"schema_version": 1, "seed": 0, "tpe": {"n0": 20, "n": 100},
           "constraints": {"model_size_bytes": 300}, "output": {"dir": str(tmp_path / "run")}}
    state = run_search(cfg)
    elapsed = time.perf_counter() - t0
    best = state.best
    random_best = max(t.objective for t in state.trials if t.phase == "random")
    template = TinyNet.load(tmp_path / "run/template.json")
    conf = Configuration.from_point(best.point)
    rep = cost_report(scale_layers(template.layers, conf.widths), conf, HardwareSpec())
    within = rep.model_size_bytes <= 300
    penalties = best.metrics["penalties"]
    constraint_ok = within or penalties.get("model_size_bytes", 0) > 0
    ok = (len(template.layers) == 3 and len(state.trials) == 100 and best.objective >= random_best
          and constraint_ok and elapsed < 900)
    report(6, ok, f"best_objective={best.objective:.4f} random_phase_best={random_best:.4f} "
                  f"accuracy={best.metrics['accuracy']:.4f} size={rep.model_size_bytes}B<=300B:{within} "
                  f"penalties={penalties} t={elapsed:.1f}s")
    assert ok


# -- 7. documented scope ------------------------------------------------------------------------


def test_criterion7_out_of_scope_documented(report):
    text = (ROOT / "README.md").read_text().lower()
    needed = ["out of scope", "table ii", "accuracy", "speedup", "table iii", "gpu-hour",
              "fig. 3", "iris", "titanic", "property"]
    missing = [n for n in needed if n not in text]
    report(7, not missing, f"missing={missing}")
    assert not missing
