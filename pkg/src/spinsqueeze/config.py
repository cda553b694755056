"""Run configuration: a single JSON file, schema-validated before any
compute, with defaults applied and unknown keys rejected.

Two hashes are derived from a validated config.  sim_hash covers only the
keys that determine raw trajectories (model, lattice, ensemble,
integrator, seed) so analysis-threshold tweaks never invalidate finished
simulation data; config_hash covers everything and is stamped into
analysis outputs.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import jsonschema

from . import ensemble, persist
from .dynamics import DEFAULT_ABS_TOL, DEFAULT_REL_TOL

ENV_OUT_ROOT = "SPINSQUEEZE_OUT"

_number_or_list = lambda inner: {"oneOf": [inner, {"type": "array", "items": inner, "minItems": 1}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "spinsqueeze-run-config",
    "type": "object",
    "additionalProperties": False,
    "required": ["lattice", "ensemble", "seed"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "J": {"type": "number", "exclusiveMinimum": 0, "default": 1.0},
                "delta": _number_or_list({"type": "number"}) | {"default": [-1.0]},
                "exponent": {"type": "number", "exclusiveMinimum": 0, "default": 3.0},
                "j_perp": {"enum": [0, 1], "default": 1.0},
            },
            "default": {},
        },
        "lattice": {
            "type": "object",
            "additionalProperties": False,
            "required": ["L", "p"],
            "properties": {
                "L": _number_or_list({"type": "integer", "minimum": 2}),
                "p": _number_or_list(
                    {"type": "number", "minimum": 0, "exclusiveMaximum": 1}
                ),
                "boundary": {"enum": ["open", "periodic"], "default": "open"},
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_realizations", "n_traj"],
            "properties": {
                "n_realizations": {"type": "integer", "minimum": 1},
                "n_traj": {"type": "integer", "minimum": 0},
                "method": {"enum": ["dtwa", "ctwa", "exact"], "default": "dtwa"},
                "t_max": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
                "pilot_topt": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
                "default_tmax": {"type": "number", "exclusiveMinimum": 0, "default": 500.0},
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rel_tol": {"type": "number", "exclusiveMinimum": 0, "default": DEFAULT_REL_TOL},
                "abs_tol": {"type": "number", "exclusiveMinimum": 0, "default": DEFAULT_ABS_TOL},
                "points_per_decade": {"type": "integer", "minimum": 1, "default": 40},
                "batch_size": {"type": "integer", "minimum": 1, "default": 2048},
            },
            "default": {},
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha_threshold": {"type": "number", "exclusiveMinimum": 0, "default": 0.1},
                "nu_threshold": {"type": "number", "exclusiveMinimum": 0, "default": 0.1},
                "early_time_cutoff": {"type": "number", "minimum": 0, "default": 5.0},
                "n_ref": {"type": "number", "exclusiveMinimum": 0, "default": 5.0e3},
            },
            "default": {},
        },
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
    },
}

_SIM_KEYS = ("model", "lattice", "ensemble", "integrator", "seed")


class ConfigError(Exception):
    pass


def _apply_defaults(obj, schema):
    if schema.get("type") == "object" and isinstance(obj, dict):
        for key, sub in schema.get("properties", {}).items():
            if key not in obj and "default" in sub:
                obj[key] = copy.deepcopy(sub["default"])
            if key in obj:
                _apply_defaults(obj[key], sub)
    return obj


def _as_list(v):
    return list(v) if isinstance(v, list) else [v]


def validate_config(raw: dict) -> dict:
    """Schema-check, fill defaults, and normalize scalar grid axes to lists."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{where}: {e.message}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    cfg = _apply_defaults(copy.deepcopy(raw), SCHEMA)
    cfg["model"]["delta"] = [float(d) for d in _as_list(cfg["model"]["delta"])]
    cfg["lattice"]["L"] = [int(x) for x in _as_list(cfg["lattice"]["L"])]
    cfg["lattice"]["p"] = [float(x) for x in _as_list(cfg["lattice"]["p"])]
    return cfg


def load_config(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    return validate_config(raw)


def apply_overrides(cfg: dict, assignments: list[str]) -> dict:
    """Apply dotted key=value pairs on top of a config, then re-validate.

    Values parse as JSON first (so numbers, lists, booleans work) and fall
    back to bare strings.
    """
    out = copy.deepcopy(cfg)
    for item in assignments:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot descend into non-object at {part!r} in {key!r}")
        node[parts[-1]] = parsed
    return validate_config(out)


def config_hash(cfg: dict) -> str:
    return persist.stable_hash(cfg)


def sim_hash(cfg: dict) -> str:
    return persist.stable_hash({k: cfg[k] for k in _SIM_KEYS if k in cfg})


def resolve_out_dir(cfg: dict, cli_value: str | None = None) -> Path:
    """Precedence: CLI flag, config key, environment root, ./runs."""
    if cli_value:
        return Path(cli_value)
    if cfg.get("out_dir"):
        return Path(cfg["out_dir"])
    env = os.environ.get(ENV_OUT_ROOT)
    if env:
        return Path(env)
    return Path("runs")


def build_plan(cfg: dict) -> ensemble.SweepPlan:
    """Expand the config's grid axes into a sweep plan.

    Point order (and with it the seed assignment) is the cross product
    p-outer, delta-middle, L-inner, in the order the axes were written.
    """
    ens = cfg["ensemble"]
    t_max, warning = ensemble.plan_tmax(
        pilot_topt=ens["pilot_topt"],
        default_tmax=ens["default_tmax"],
        override=ens["t_max"],
    )
    points = tuple(
        ensemble.SweepPoint(
            p=p, delta=d, L=L,
            n_realizations=ens["n_realizations"],
            n_traj=ens["n_traj"],
            t_max=t_max,
            method=ens["method"],
            t_max_warning=warning,
        )
        for p in cfg["lattice"]["p"]
        for d in cfg["model"]["delta"]
        for L in cfg["lattice"]["L"]
    )
    icfg = cfg["integrator"]
    return ensemble.SweepPlan(
        points=points,
        seed=cfg["seed"],
        points_per_decade=icfg["points_per_decade"],
        rel_tol=icfg["rel_tol"],
        abs_tol=icfg["abs_tol"],
        batch_size=icfg["batch_size"],
        j_perp=float(cfg["model"]["j_perp"]),
        J=cfg["model"]["J"],
        exponent=cfg["model"]["exponent"],
        boundary=cfg["lattice"]["boundary"],
    )
