"""Run configuration: JSON schema, defaults and loading.

A run config is one JSON document.  It is validated against :data:`SCHEMA`
before anything is computed; unknown keys are rejected at every level.
Relative paths inside it are resolved against the directory of the config
file (or the working directory for in-memory dicts).
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigurationError
from .space import BIT_CHOICES, DEFAULT_SUBSETS, WIDTH_CHOICES

SCHEMA_VERSION = 1

_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "seed": {"type": "integer", "minimum": 0},
    "optimizer": {"enum": ["kmeans-tpe", "classic-tpe", "random"]},
    "task": _obj({
        "kind": {"enum": ["blobs2d", "two_spirals"]},
        "train_count": _pos_int,
        "test_count": _pos_int,
        "noise": {"type": "number", "minimum": 0},
        "classes": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
    }),
    "net": _obj({
        "hidden": {"type": "array", "items": _pos_int, "minItems": 1},
        "pretrain_epochs": _pos_int,
        "lr": _pos_num,
        "checkpoint": {"type": "string"},
    }),
    "space": _obj({
        "bits": {"type": "array", "items": {"enum": list(BIT_CHOICES)}, "minItems": 1},
        "widths": {"type": "array", "items": _pos_num, "minItems": 1},
        "bit_candidates": {"type": "array", "minItems": 1,
                           "items": {"type": "array", "minItems": 1, "items": {"enum": list(BIT_CHOICES)}}},
        "width_candidates": {"type": "array", "minItems": 1,
                             "items": {"type": "array", "minItems": 1, "items": _pos_num}},
        "pruning": _obj({
            "enabled": {"type": "boolean"},
            "report": {"type": "string"},
            "k": _pos_int,
            "subsets": {"type": "array", "minItems": 1,
                        "items": {"type": "array", "minItems": 1,
                                  "items": {"enum": list(BIT_CHOICES)}}},
            "estimator": {"enum": ["hutchinson", "exact"]},
            "probes": _pos_int,
            "samples": _pos_int,
            "exempt_first_last": {"type": "boolean"},
        }),
    }),
    "tpe": _obj({
        "n0": _pos_int,
        "n": _pos_int,
        "c0": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "maxiters": {"type": "integer", "minimum": 0},
        "n_ei_candidates": _pos_int,
        "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "anneal_every": _pos_int,
        "surrogate": {"enum": ["categorical", "ordinal_gaussian"]},
    }),
    "constraints": _obj({name: {"type": ["number", "null"], "exclusiveMinimum": 0}
                         for name in ("model_size_bytes", "latency_cycles", "energy", "throughput")}),
    "penalty": _obj({"multiplier": {"type": "number", "minimum": 0}}),
    "hardware": _obj({
        "rows": _pos_int,
        "cols": _pos_int,
        "dsp_mult_width": {"type": "array", "items": _pos_int, "minItems": 2, "maxItems": 2},
        "accumulator_width": _pos_int,
        "packing_table": {"type": "object",
                          "patternProperties": {"^[0-9]+$": {"type": "array", "items": {"type": "integer"},
                                                             "minItems": 2, "maxItems": 2}},
                          "additionalProperties": False},
        "clock_mhz": _pos_num,
    }),
    "evaluation": _obj({"epochs": _pos_int, "lr": _pos_num, "batch_size": _pos_int}),
    "output": _obj({
        "dir": {"type": "string"},
        "trial_log": {"type": "string"},
        "state": {"type": "string"},
        "include_timing": {"type": "boolean"},
    }),
})

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "optimizer": "kmeans-tpe",
    "task": {"kind": "blobs2d", "train_count": 512, "test_count": 512, "noise": 1.0,
             "classes": 4, "seed": 0},
    "net": {"hidden": [16, 16], "pretrain_epochs": 30, "lr": 0.01},
    "space": {
        "bits": list(BIT_CHOICES),
        "widths": list(WIDTH_CHOICES),
        "pruning": {"enabled": False, "k": 4, "estimator": "hutchinson", "probes": 100,
                    "samples": 512, "exempt_first_last": False},
    },
    "tpe": {"n0": 20, "n": 100, "c0": 0.25, "alpha": 0.98, "maxiters": 100,
            "n_ei_candidates": 24, "gamma": 0.25, "anneal_every": 1, "surrogate": "categorical"},
    "constraints": {},
    "penalty": {"multiplier": 10.0},
    "hardware": {},
    "evaluation": {"epochs": 4, "lr": 0.01, "batch_size": 64},
    "output": {"dir": "run", "trial_log": "trials.jsonl", "state": "state.json",
               "include_timing": False},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key not in ("constraints", "hardware"):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(raw: dict) -> None:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"run config invalid at {where}: {exc.message}") from None


def _resolve(path: str | None, base: Path) -> str | None:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else (base / p).resolve())


def normalize(raw: dict, base_dir=None) -> dict:
    """Validate ``raw``, fill in defaults and make every path absolute."""
    if not isinstance(raw, dict):
        raise ConfigurationError("run config must be a JSON object")
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    pruning = cfg["space"]["pruning"]
    if "subsets" not in pruning:
        k = pruning["k"]
        if k > len(DEFAULT_SUBSETS):
            raise ConfigurationError(f"pruning k={k} needs explicit subsets")
        pruning["subsets"] = _default_subsets(k)
    if len(pruning["subsets"]) != pruning["k"]:
        raise ConfigurationError("pruning subsets must have exactly k entries")
    if cfg["tpe"]["n"] < cfg["tpe"]["n0"]:
        raise ConfigurationError("tpe.n must be >= tpe.n0")
    pruning["report"] = _resolve(pruning.get("report"), base)
    cfg["net"]["checkpoint"] = _resolve(cfg["net"].get("checkpoint"), base)
    cfg["output"]["dir"] = _resolve(cfg["output"]["dir"], base)
    return cfg


def _default_subsets(k: int):
    """The default subsets with the lowest-precision ones merged down to ``k`` groups."""
    head = [list(s) for s in DEFAULT_SUBSETS[:k - 1]]
    tail = sorted({b for s in DEFAULT_SUBSETS[k - 1:] for b in s}, reverse=True)
    return head + [tail]


def load(path) -> dict:
    """Read, validate and normalize a run config file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
    return normalize(raw, path.parent)
