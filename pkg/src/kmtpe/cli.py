"""Command-line entry point ``kmtpe``.

Subcommands: ``search``, ``sensitivity``, ``cost`` and ``bench``.  Exit codes:
0 success, 2 configuration or input error, 3 numerical error, 4 I/O or
integrity error.  ``KMTPE_LOG`` (error, warning, info, debug) sets verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (CapacityError, ConfigurationError, InputError, IntegrityError, KmtpeError,
                     NumericalError)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2)
    if path is None or path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_search(args) -> int:
    from .driver import resume, run_search
    from .space import Configuration

    if args.resume:
        if args.seed is not None or args.optimizer is not None:
            raise ConfigurationError("--seed and --optimizer cannot change a resumed run")
        state = resume(args.resume)
    elif args.config:
        state = run_search(args.config, seed=args.seed, optimizer=args.optimizer)
    else:
        raise ConfigurationError("search needs --config or --resume")
    best = state.best
    summary = {"trials": len(state.trials), "optimizer": state.optimizer}
    if best is None:
        summary["best"] = None
    else:
        summary["best"] = {"index": best.index, "objective": best.objective,
                           "configuration": Configuration.from_point(best.point).to_dict(),
                           "metrics": best.metrics}
    _write_json(None, summary)
    return EXIT_OK


def _load_dataset(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            if "x" not in data or "y" not in data:
                raise InputError(f"{path}: npz dataset needs arrays 'x' and 'y'")
            return data["x"], data["y"]
    d = _read_json(path)
    if not isinstance(d, dict) or "x" not in d or "y" not in d:
        raise InputError(f"{path}: JSON dataset needs keys 'x' and 'y'")
    return np.asarray(d["x"], dtype=float), np.asarray(d["y"])


def cmd_sensitivity(args) -> int:
    from .evalsim import SyntheticTask
    from .sensitivity import analyze_hessian
    from .tinynet import TinyNet

    net = TinyNet.load(args.net)
    if args.data:
        x, y = _load_dataset(args.data)
    else:
        xtr, ytr, _, _ = SyntheticTask(args.task, classes=2 if args.task == "two_spirals" else 4).generate()
        x, y = xtr, ytr
    report = analyze_hessian(net, (x, y), k=args.k, estimator=args.estimator, probes=args.probes,
                             samples=args.samples, seed=args.seed)
    _write_json(args.out, report.to_dict())
    return EXIT_OK


def _load_layers(args):
    from .networks import preset
    from .space import LayerShape

    if args.preset:
        return preset(args.preset)
    d = _read_json(args.layers)
    items = d["layers"] if isinstance(d, dict) else d
    return [LayerShape.from_dict(x) for x in items]


def cmd_cost(args) -> int:
    from .hw import HardwareSpec, cost_report
    from .space import Configuration

    if bool(args.preset) == bool(args.layers):
        raise ConfigurationError("cost needs exactly one of --preset or --layers")
    layers = _load_layers(args)
    if args.configuration:
        config = Configuration.from_dict(_read_json(args.configuration))
    elif args.bits_row or args.widths_row:
        if not (args.bits_row and args.widths_row):
            raise ConfigurationError("--bits-row and --widths-row go together")
        config = Configuration.parse(args.bits_row, args.widths_row)
    else:
        config = Configuration.uniform(len(layers), args.bits, args.width)
    hw = HardwareSpec.from_dict(_read_json(args.hardware)) if args.hardware else HardwareSpec()
    report = cost_report(layers, config, hw, baseline_bits=args.baseline_bits)
    _write_json(args.out, report.to_dict())
    return EXIT_OK


def cmd_bench(args) -> int:
    from .driver import run_race
    from .evalsim import BenchObjective
    from .tpe import TpeParams

    seeds = list(range(args.first_seed, args.first_seed + args.seeds))
    if len(seeds) < 20:
        raise ConfigurationError(f"bench needs at least 20 seeds, got {len(seeds)}")
    objective = BenchObjective(args.kind, args.dims, args.levels, args.flat_fraction, args.steps,
                               args.margin, args.objective_seed)
    params = TpeParams(n0=args.n0, n=args.n, maxiters=args.n)
    report = run_race(objective, args.optimizers, seeds, args.n, params)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "race.csv")
    report.write_summary(out / "summary.json")
    _write_json(None, report.summary())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    from .driver import OPTIMIZERS
    from .evalsim import BENCH_KINDS, TASK_KINDS
    from .networks import PRESETS

    parser = argparse.ArgumentParser(prog="kmtpe", description="Mixed-precision and layer-width "
                                     "search with k-means TPE.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run or resume a search")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--resume", metavar="PATH", help="state snapshot of an interrupted run")
    p.add_argument("--optimizer", choices=OPTIMIZERS, help="override the config optimizer")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("sensitivity", help="per-layer Hessian-trace report")
    p.add_argument("--net", required=True, help="TinyNet checkpoint JSON")
    p.add_argument("--data", help="dataset .npz or .json with 'x' and 'y'")
    p.add_argument("--task", choices=TASK_KINDS, default="blobs2d",
                   help="synthetic training set used when --data is absent")
    p.add_argument("--k", type=int, default=4, help="number of sensitivity clusters")
    p.add_argument("--estimator", choices=("hutchinson", "exact"), default="hutchinson")
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report path (stdout if omitted)")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("cost", help="model size and latency of a configuration")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in layer shapes")
    p.add_argument("--layers", help="layer shapes JSON")
    p.add_argument("--configuration", help="configuration JSON with 'bits' and 'widths'")
    p.add_argument("--bits-row", help="comma-separated bit-widths, one per layer")
    p.add_argument("--widths-row", help="comma-separated width multipliers, one per layer")
    p.add_argument("--bits", type=int, default=16, help="uniform bit-width if no configuration")
    p.add_argument("--width", type=float, default=1.0, help="uniform width if no configuration")
    p.add_argument("--hardware", help="hardware spec JSON")
    p.add_argument("--baseline-bits", type=int, default=16)
    p.add_argument("--out", help="report path (stdout if omitted)")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("bench", help="race optimizers on a synthetic objective")
    p.add_argument("--kind", choices=BENCH_KINDS, default="plateau_grid")
    p.add_argument("--dims", type=int, default=6)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--flat-fraction", type=float, default=0.9)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--objective-seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=20, help="number of optimizer seeds (>= 20)")
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--n0", type=int, default=20)
    p.add_argument("--n", type=int, default=100, help="evaluation budget per run")
    p.add_argument("--optimizers", nargs="+", choices=OPTIMIZERS, default=list(OPTIMIZERS))
    p.add_argument("--out-dir", default="bench")
    p.set_defaults(func=cmd_bench)
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigurationError, InputError, CapacityError)):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, IntegrityError)):
        return EXIT_IO
    return 1


def main(argv=None) -> int:
    level = os.environ.get("KMTPE_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (KmtpeError, OSError) as exc:
        print(f"kmtpe {args.command}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
