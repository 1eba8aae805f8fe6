"""Search orchestration: random phase, annealed surrogate loop, logging, resume, races.

The loop follows the k-means TPE recipe: evaluate ``n0`` random points, then
for every surrogate iteration cluster the objective values into
``k = ceil(1/c)`` groups, fit ``l`` on the top cluster and ``g`` on the bottom
one, evaluate the best ``l/g`` candidate and shrink ``c`` by ``alpha``.  The
same loop runs classic TPE (quantile split) and random search, so races share
everything except the split rule.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import os
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, IntegrityError, KmtpeError
from .tpe import SurrogatePair, TpeParams, classic_threshold, kmeans_split, propose

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OPTIMIZERS = ("kmeans-tpe", "classic-tpe", "random")


@dataclass
class Trial:
    index: int
    point: tuple
    objective: float
    metrics: dict
    phase: str
    k_used: int | None = None
    failed: bool = False
    wall_time_ms: float | None = None

    def to_record(self, include_timing: bool = False) -> dict:
        rec = {
            "schema_version": SCHEMA_VERSION,
            "index": self.index,
            "phase": self.phase,
            "point": list(self.point),
            "objective": None if self.failed else self.objective,
            "failed": self.failed,
            "k_used": self.k_used,
            "metrics": _finite_or_none(self.metrics),
        }
        if include_timing:
            rec["wall_time_ms"] = self.wall_time_ms
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Trial":
        failed = bool(rec["failed"])
        return cls(rec["index"], tuple(rec["point"]),
                   -math.inf if failed else float(rec["objective"]),
                   rec["metrics"], rec["phase"], rec["k_used"], failed, rec.get("wall_time_ms"))


def _finite_or_none(obj):
    """Replace NaN/inf floats by ``None`` so records stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


@dataclass
class SearchState:
    params: TpeParams
    optimizer: str
    dims: list
    trials: list[Trial] = field(default_factory=list)
    c: float = 0.25
    rng_state: dict | None = None
    random_plan: list[tuple] = field(default_factory=list)

    @property
    def best(self) -> Trial | None:
        ok = [t for t in self.trials if not t.failed]
        return max(ok, key=lambda t: t.objective) if ok else None

    @property
    def surrogate_done(self) -> int:
        return sum(t.phase == "surrogate" for t in self.trials)

    @property
    def finished(self) -> bool:
        return len(self.trials) >= self.params.n0 + self.params.surrogate_iterations

    def best_so_far(self) -> list[float]:
        out, cur = [], -math.inf
        for t in self.trials:
            if not t.failed:
                cur = max(cur, t.objective)
            out.append(cur)
        return out


def _sample_points(dims, count, rng):
    idx = np.column_stack([rng.integers(len(d), size=count) for d in dims])
    return [tuple(dims[j][i] for j, i in enumerate(row)) for row in idx]


def _split(state: SearchState, rng):
    ok = [t for t in state.trials if not t.failed]
    ys = [t.objective for t in ok]
    points = [t.point for t in ok]
    if state.optimizer == "kmeans-tpe":
        good, bad, k = kmeans_split(ys, points, state.c)
        return good, bad, k
    good_idx, bad_idx = classic_threshold(ys, state.params.gamma)
    return [points[i] for i in good_idx], [points[i] for i in bad_idx], None


def step(state: SearchState, objective: Callable, rng) -> Trial:
    """Run one trial (random or surrogate) and append it to ``state``."""
    p = state.params
    index = len(state.trials)
    k_used = None
    if index < p.n0:
        phase = "random"
        point = state.random_plan[index]
    else:
        phase = "surrogate"
        ok = [t for t in state.trials if not t.failed]
        if state.optimizer == "random" or len(ok) < 2:
            point = _sample_points(state.dims, 1, rng)[0]
        else:
            good, bad, k_used = _split(state, rng)
            pair = SurrogatePair.fit(good, bad, state.dims, p.surrogate)
            seen = {t.point for t in state.trials}
            point = propose(pair, p.n_ei_candidates, rng, exclude=seen)
    t0 = time.perf_counter()
    value, metrics, failed = objective(point, index)
    trial = Trial(index, tuple(point), float(value), metrics, phase, k_used, bool(failed),
                  (time.perf_counter() - t0) * 1e3)
    state.trials.append(trial)
    if phase == "surrogate" and state.surrogate_done % p.anneal_every == 0:
        state.c *= p.alpha
    state.rng_state = copy.deepcopy(rng.bit_generator.state)
    return trial


def new_state(dims, params: TpeParams, optimizer: str, seed) -> tuple[SearchState, np.random.Generator]:
    if optimizer not in OPTIMIZERS:
        raise ConfigurationError(f"unknown optimizer {optimizer!r}; choose from {OPTIMIZERS}")
    rng = np.random.default_rng(seed)
    dims = [tuple(d) for d in dims]
    if any(len(d) == 0 for d in dims):
        raise ConfigurationError("empty candidate set")
    plan = _sample_points(dims, params.n0, rng)
    state = SearchState(params, optimizer, dims, [], params.c0,
                        copy.deepcopy(rng.bit_generator.state), plan)
    if params.n - params.n0 > params.maxiters:
        log.warning("maxiters=%d caps the surrogate loop below n - n0 = %d",
                    params.maxiters, params.n - params.n0)
    return state, rng


def restore_rng(state: SearchState) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = copy.deepcopy(state.rng_state)
    return rng


def optimize(dims, objective: Callable, params: TpeParams, optimizer: str = "kmeans-tpe",
             seed=0, on_trial: Callable | None = None, stop_after: int | None = None,
             state: SearchState | None = None) -> SearchState:
    """Maximize ``objective(point, index) -> (value, metrics, failed)`` over ``dims``.

    Pass ``state`` to continue an earlier run; ``stop_after`` halts once that
    many trials exist (used to simulate interruptions).
    """
    if state is None:
        state, rng = new_state(dims, params, optimizer, seed)
    else:
        rng = restore_rng(state)
    while not state.finished:
        if stop_after is not None and len(state.trials) >= stop_after:
            break
        trial = step(state, objective, rng)
        if on_trial is not None:
            on_trial(state, trial)
    return state


# ---------------------------------------------------------------------------
# persistence


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def state_payload(state: SearchState, run_config: dict | None = None) -> dict:
    return {
        "params": vars(state.params),
        "optimizer": state.optimizer,
        "dims": [list(d) for d in state.dims],
        "c": state.c,
        "rng_state": state.rng_state,
        "random_plan": [list(p) for p in state.random_plan],
        "trials": [t.to_record(include_timing=True) for t in state.trials],
        "run_config": run_config,
    }


def save_state(path, state: SearchState, run_config: dict | None = None) -> None:
    payload = state_payload(state, run_config)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "checksum": hashlib.sha256(_canonical(payload).encode()).hexdigest(),
        "payload": payload,
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    os.replace(tmp, path)


def load_state(path) -> tuple[SearchState, dict | None]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"state file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION or "payload" not in doc:
        raise IntegrityError(f"state file {path} has an unsupported layout")
    payload = doc["payload"]
    if hashlib.sha256(_canonical(payload).encode()).hexdigest() != doc.get("checksum"):
        raise IntegrityError(f"state file {path} failed its checksum")
    try:
        params = TpeParams(**payload["params"])
        state = SearchState(
            params, payload["optimizer"], [tuple(d) for d in payload["dims"]],
            [Trial.from_record(r) for r in payload["trials"]], payload["c"],
            payload["rng_state"], [tuple(p) for p in payload["random_plan"]])
    except (KeyError, TypeError, KmtpeError) as exc:
        raise IntegrityError(f"state file {path} is malformed: {exc}") from None
    return state, payload.get("run_config")


class TrialLog:
    """Append-only JSON-lines trial log with a single writer."""

    def __init__(self, path, include_timing: bool = False):
        self.path = Path(path)
        self.include_timing = include_timing

    def rewrite(self, trials: Sequence[Trial]) -> None:
        with open(self.path, "w") as fh:
            for t in trials:
                fh.write(json.dumps(t.to_record(self.include_timing)) + "\n")

    def append(self, trial: Trial) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(trial.to_record(self.include_timing)) + "\n")

    @staticmethod
    def read(path) -> list[Trial]:
        with open(path) as fh:
            return [Trial.from_record(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# full runs


def trial_seed(seed: int, index: int) -> int:
    """Per-trial evaluation seed, independent of the optimizer and of resumes."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class RunContext:
    """Everything a run needs besides the search state, rebuilt from the config."""

    config: dict
    task: "SyntheticTask"
    template: "TinyNet"
    data: tuple
    hardware: "HardwareSpec"
    constraints: "ConstraintSet"
    space: "SearchSpace | None" = None
    report: "SensitivityReport | None" = None

    @property
    def out_dir(self) -> Path:
        return Path(self.config["output"]["dir"])

    @property
    def log_path(self) -> Path:
        return self.out_dir / self.config["output"]["trial_log"]

    @property
    def state_path(self) -> Path:
        return self.out_dir / self.config["output"]["state"]

    def objective(self, point, index):
        from .evalsim import evaluate
        from .space import Configuration

        ev = self.config["evaluation"]
        result = evaluate(Configuration.from_point(point), self.template, self.task,
                          self.constraints, self.hardware, epochs=ev["epochs"],
                          seed=trial_seed(self.config["seed"], index), lr=ev["lr"],
                          batch_size=ev["batch_size"],
                          multiplier=self.config["penalty"]["multiplier"], data=self.data)
        return result.objective, result.metrics(), result.failed


def _context(cfg: dict, build_space: bool) -> RunContext:
    from .evalsim import SyntheticTask, pretrain
    from .hw import ConstraintSet, HardwareSpec
    from .tinynet import TinyNet

    task = SyntheticTask(**cfg["task"])
    data = task.generate()
    net = cfg["net"]
    if net.get("checkpoint"):
        template = TinyNet.load(net["checkpoint"])
    else:
        template = pretrain(task, net["hidden"], net["pretrain_epochs"], lr=net["lr"], seed=cfg["seed"])
    ctx = RunContext(cfg, task, template, data, HardwareSpec.from_dict(cfg["hardware"]),
                     ConstraintSet.from_dict(cfg["constraints"]))
    if build_space:
        ctx.space, ctx.report = _build_space(ctx)
    return ctx


def _build_space(ctx: RunContext):
    from .sensitivity import SensitivityReport, analyze_hessian
    from .space import SearchSpace, build_pruned_space

    sp = ctx.config["space"]
    pruning = sp["pruning"]
    layers = ctx.template.layers
    n = len(layers)
    widths = sp.get("width_candidates") or [sp["widths"]] * n
    if len(widths) != n:
        raise ConfigurationError(f"space.width_candidates has {len(widths)} entries for {n} layers")
    if not pruning["enabled"]:
        bits = sp.get("bit_candidates") or [sp["bits"]] * n
        if len(bits) != n:
            raise ConfigurationError(f"space.bit_candidates has {len(bits)} entries for {n} layers")
        return SearchSpace(tuple(layers), tuple(map(tuple, bits)), tuple(map(tuple, widths))), None
    if sp.get("bit_candidates"):
        raise ConfigurationError("space.bit_candidates and pruning are mutually exclusive")
    if pruning.get("report"):
        report = SensitivityReport.load(pruning["report"])
    else:
        x, y = ctx.data[0], ctx.data[1]
        report = analyze_hessian(ctx.template, (x, y), k=pruning["k"], estimator=pruning["estimator"],
                                 probes=pruning["probes"], samples=pruning["samples"],
                                 seed=ctx.config["seed"])
        ctx.out_dir.mkdir(parents=True, exist_ok=True)
        report.save(ctx.out_dir / "sensitivity.json")
    space = build_pruned_space(layers, report, pruning["k"], pruning["subsets"], sp["widths"],
                               pruning["exempt_first_last"])
    space = SearchSpace(space.layers, space.bit_candidates, tuple(map(tuple, widths)))
    return space, report


def _tpe_params(cfg: dict) -> TpeParams:
    return TpeParams(**cfg["tpe"], seed=cfg["seed"])


def _drive(ctx: RunContext, state: SearchState | None, stop_after: int | None) -> SearchState:
    cfg = ctx.config
    trial_log = TrialLog(ctx.log_path, cfg["output"]["include_timing"])

    def on_trial(st, trial):
        trial_log.append(trial)
        save_state(ctx.state_path, st, cfg)
        log.info("trial %d (%s) objective=%s k=%s", trial.index, trial.phase,
                 "failed" if trial.failed else f"{trial.objective:.4f}", trial.k_used)

    if state is None:
        trial_log.rewrite([])
        state = optimize(ctx.space.dimensions, ctx.objective, _tpe_params(cfg), cfg["optimizer"],
                         seed=cfg["seed"], on_trial=on_trial, stop_after=stop_after)
    else:
        trial_log.rewrite(state.trials)
        state = optimize(state.dims, ctx.objective, state.params, state.optimizer,
                         on_trial=on_trial, stop_after=stop_after, state=state)
    save_state(ctx.state_path, state, cfg)
    return state


def run_search(config, seed: int | None = None, optimizer: str | None = None,
               stop_after: int | None = None) -> SearchState:
    """Run a full search from a config file path or an in-memory config dict.

    ``seed`` and ``optimizer`` override the config.  The trial log and the
    state snapshot are written after every trial, so an abort leaves both
    consistent with the trials completed so far.
    """
    from . import config as run_config

    if isinstance(config, dict):
        cfg = run_config.normalize(config)
    else:
        cfg = run_config.load(config)
    if seed is not None:
        cfg["seed"] = int(seed)
    if optimizer is not None:
        if optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {optimizer!r}; choose from {OPTIMIZERS}")
        cfg["optimizer"] = optimizer
    ctx = _context(cfg, build_space=True)
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    if not cfg["net"].get("checkpoint"):
        ctx.template.save(ctx.out_dir / "template.json")
    state = _drive(ctx, None, stop_after)
    _log_best(state)
    return state


def resume(state_file, stop_after: int | None = None) -> SearchState:
    """Continue an interrupted run; a finished run is returned unchanged."""
    state, cfg = load_state(state_file)
    if cfg is None:
        raise IntegrityError(f"state file {state_file} carries no run config")
    if state.finished:
        return state
    ctx = _context(cfg, build_space=False)
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    state = _drive(ctx, state, stop_after)
    _log_best(state)
    return state


def _log_best(state: SearchState) -> None:
    best = state.best
    if best is not None:
        log.info("best trial %d objective=%.4f", best.index, best.objective)


# ---------------------------------------------------------------------------
# races


@dataclass
class RaceReport:
    optimum: float
    target: float
    budget: int
    trajectories: dict[str, dict[int, list[float]]]

    def evals_to_target(self, optimizer: str) -> dict[int, int]:
        """First 1-based trial reaching the target; ``budget + 1`` if never reached."""
        out = {}
        for seed, traj in self.trajectories[optimizer].items():
            hit = next((i + 1 for i, v in enumerate(traj) if v >= self.target), self.budget + 1)
            out[seed] = hit
        return out

    def final_best(self, optimizer: str) -> dict[int, float]:
        return {s: traj[-1] for s, traj in self.trajectories[optimizer].items()}

    def win_fraction(self, a: str, b: str) -> float:
        """Fraction of seeds where ``a`` ends at least as high as ``b``."""
        fa, fb = self.final_best(a), self.final_best(b)
        return sum(fa[s] >= fb[s] for s in fa) / len(fa)

    def summary(self) -> dict:
        out = {"optimum": self.optimum, "target": self.target, "budget": self.budget,
               "seeds": len(next(iter(self.trajectories.values()))), "optimizers": {}}
        for opt in self.trajectories:
            hits = list(self.evals_to_target(opt).values())
            finals = list(self.final_best(opt).values())
            out["optimizers"][opt] = {
                "median_evals_to_target": statistics.median(hits),
                "reached_fraction": sum(h <= self.budget for h in hits) / len(hits),
                "median_final_best": statistics.median(finals),
                "mean_final_best": statistics.fmean(finals),
            }
        if "kmeans-tpe" in self.trajectories and "classic-tpe" in self.trajectories:
            km = out["optimizers"]["kmeans-tpe"]["median_evals_to_target"]
            cl = out["optimizers"]["classic-tpe"]["median_evals_to_target"]
            out["kmeans_over_classic_evals_ratio"] = km / cl
            out["kmeans_final_ge_classic_fraction"] = self.win_fraction("kmeans-tpe", "classic-tpe")
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["optimizer", "seed", "trial_index", "best_so_far"])
            for opt, runs in self.trajectories.items():
                for seed, traj in runs.items():
                    for i, v in enumerate(traj):
                        w.writerow([opt, seed, i, repr(float(v))])

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def run_race(objective, optimizers: Sequence[str], seeds: Sequence[int], n: int = 100,
             params: TpeParams | None = None) -> RaceReport:
    """Race optimizers on a :class:`~kmtpe.evalsim.BenchObjective` over many seeds.

    Every optimizer sees the same random phase for a given seed.  The target is
    1% of the objective's value range below its optimum.
    """
    if len(optimizers) < 2:
        raise ConfigurationError("a race needs at least two optimizers")
    if len(seeds) < 20:
        raise ConfigurationError("a race needs at least 20 seeds")
    params = params or TpeParams(n=n)
    if params.n != n:
        params = TpeParams(**{**vars(params), "n": n})
    dims = objective.candidates

    def f(point, index):
        return objective.value(point), {}, False

    traj: dict[str, dict[int, list[float]]] = {}
    for opt in optimizers:
        traj[opt] = {}
        for s in seeds:
            state = optimize(dims, f, params, opt, seed=s)
            traj[opt][s] = state.best_so_far()
    optimum = objective.optimum
    return RaceReport(optimum, optimum - 0.01 * optimum, n, traj)
