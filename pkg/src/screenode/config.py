"""Run configuration for the command-line verbs: JSON schemas and loading.

Every verb reads one JSON object. ``seed`` may come from the file or from
``--seed`` (the flag wins). A manifest written by a previous run is also a
valid config: its recorded command, seed and resolved config are reused.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .experiment import PerturbationMap
from .grn import GrnSpec

BUILTIN_FILES = ("receptor_cascade", "feedback_oscillator", "differentiating", "smooth_screen", "leaf_knockout")
BUILTIN_NETWORKS = BUILTIN_FILES + ("replica",)

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_PMAP = {
    "type": "object",
    "patternProperties": {"^[0-9]+$": {"enum": ["ko", "i", "a"]}},
    "additionalProperties": False,
}
_NETWORK = {
    "oneOf": [
        {"type": "object", "properties": {"builtin": {"enum": list(BUILTIN_NETWORKS)}},
         "required": ["builtin"], "additionalProperties": False},
        {"type": "object", "properties": {"path": {"type": "string"}},
         "required": ["path"], "additionalProperties": False},
    ]
}
_MEASURE = {
    "type": "object",
    "properties": {
        "capture_rate": _POS,
        "dispersion": _POS,
        "dropout_logit_slope": _NUM,
        "dropout_logit_intercept": _NUM,
        "dropout": {"type": "boolean"},
        "depth": _POS,
    },
    "additionalProperties": False,
}
_STRATEGY = {"enum": ["per_media", "random", "control_everywhere"]}
_MODE = {"enum": ["additive", "multiplicative"]}
_BATCH = {
    "type": "object",
    "properties": {
        "n_batches": _INT1,
        "strategy": _STRATEGY,
        "noise_scale": {"type": "number", "minimum": 0},
        "mode": _MODE,
    },
    "additionalProperties": False,
}
_REPLICA = {
    "type": "object",
    "properties": {
        "n_converging": _INT1, "n_diverging": _INT1, "n_cells": {"type": "integer", "minimum": 2},
        "depth": _POS, "jitter": {"type": "number", "minimum": 0}, "keep_genes": _INT1,
        "network_seed": {"type": "integer"}, "days": {"type": "array", "items": _POS, "minItems": 2},
    },
    "additionalProperties": False,
}


def _schema(properties: dict, required=(), **extra) -> dict:
    props = {"seed": {"type": "integer", "minimum": 0}}
    props.update(properties)
    return {"$schema": "https://json-schema.org/draft/2020-12/schema", "type": "object",
            "properties": props, "required": list(required), "additionalProperties": False, **extra}


SCHEMAS = {
    "simulate": _schema({
        "network": _NETWORK,
        "perturbations": {"type": "array", "items": _PMAP},
        "medias": {"type": "array", "items": _INT1},
        "times": {"type": "array", "items": _POS, "minItems": 1},
        "n_cells": _INT1,
        "jitter": {"type": "number", "minimum": 0},
        "dt": _POS,
        "measure": _MEASURE,
        "batch": _BATCH,
        "keep_genes": {"type": ["integer", "null"], "minimum": 1},
        "replica": _REPLICA,
    }, oneOf=[{"required": ["network", "times"]}, {"required": ["replica"]}]),
    "measure": _schema({
        "states": {"type": "string"},
        "measure": _MEASURE,
        "noise": {"type": "object", "properties": {"noise_scale": {"type": "number", "minimum": 0}, "mode": _MODE},
                  "additionalProperties": False},
    }, required=["states"]),
    "train-compare": _schema({
        "pseudobulk": {"type": "string"},
        "steady": {"oneOf": [{"type": "string"}, {"type": "array", "items": {"type": "integer", "minimum": 0}}]},
        "replica": _REPLICA,
        "test_perturbations": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 1}},
        "seeds": _INT1,
        "steady_weight": {"type": "number", "minimum": 0},
        "standardize": {"type": "boolean"},
        "model": {"type": "object", "properties": {
            "hidden": {"type": "array", "items": _INT1, "minItems": 1},
            "embed": {"type": "array", "items": _INT1, "minItems": 2, "maxItems": 2},
            "n_steps": _INT1, "autonomous": {"type": "boolean"}}, "additionalProperties": False},
        "train": {"type": "object", "properties": {
            "learning_rate": _POS, "epochs": _INT1, "batch_size": {"type": "integer", "minimum": 0}},
            "additionalProperties": False},
    }, oneOf=[{"required": ["pseudobulk", "steady"]}, {"required": ["replica"]}]),
    "batch-experiment": _schema({
        "screen": {"oneOf": [
            {"type": "object", "properties": {"builtin": {"enum": ["default"]}}, "required": ["builtin"],
             "additionalProperties": False},
            {"type": "object", "properties": {
                "network": _NETWORK, "perturbations": {"type": "array", "items": _PMAP, "minItems": 1},
                "medias": {"type": "array", "items": _INT1}, "time": _POS},
             "required": ["network", "perturbations", "medias", "time"], "additionalProperties": False},
        ]},
        "noise_scale": {"type": "number", "minimum": 0},
        "n_batches": {"type": ["integer", "null"], "minimum": 1},
        "trials": _INT1,
        "replicates": _INT1,
        "mode": _MODE,
        "correction": {"enum": ["none", "batch_mean_center"]},
        "strategies": {"type": "array", "items": _STRATEGY, "minItems": 1},
        "dt": _POS,
        "plan": {"type": "object", "properties": {
            "n_batches": _INT1,
            "assignment": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                                       "minItems": 3, "maxItems": 3}}},
            "required": ["n_batches", "assignment"], "additionalProperties": False},
    }),
    "detect-steady": _schema({
        "cells": {"type": "string"},
        "margin": {"type": "number", "minimum": 0},
        "repeats": _INT1,
        "pseudocount": _POS,
        "keep_genes": {"type": ["integer", "null"], "minimum": 1},
    }, required=["cells"]),
    "pseudotime": _schema({
        "network": _NETWORK,
        "t": _POS,
        "n_controls": {"type": "integer", "minimum": 2},
        "n_perturbed": _INT1,
        "perturbation": _PMAP,
        "jitter": {"type": ["number", "null"], "minimum": 0},
        "stride": _INT1,
        "controls": {"type": "string"},
        "perturbed": {"type": "string"},
        "start": {"type": ["array", "null"], "items": _NUM},
    }, oneOf=[{"required": ["network"]}, {"required": ["controls", "perturbed", "t"]}]),
}

VERBS = tuple(SCHEMAS)


def load_config(path, command: str, seed: int | None) -> tuple[dict, int]:
    """Read, validate and resolve the seed. Raises ConfigError on any problem."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        rec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from None
    if isinstance(rec, dict) and "command" in rec and "config" in rec:
        if rec["command"] != command:
            raise ConfigError(f"manifest was written by '{rec['command']}', not '{command}'")
        rec = rec["config"]
    if not isinstance(rec, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    try:
        jsonschema.validate(rec, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from None
    if seed is None:
        seed = rec.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    rec = dict(rec, seed=int(seed))
    return rec, int(seed)


def input_path(cfg: dict, key: str, base: Path | None = None) -> Path:
    p = Path(cfg[key])
    if not p.is_file():
        raise ConfigError(f"{key}: file not found: {p}")
    return p


def builtin_spec(name: str) -> GrnSpec:
    if name == "replica":
        from .replica import replica_network

        return replica_network()[0]
    with resources.as_file(resources.files("screenode") / "data" / f"{name}.json") as p:
        return GrnSpec.load(p)


def load_network(rec: dict) -> GrnSpec:
    if "builtin" in rec:
        return builtin_spec(rec["builtin"])
    p = Path(rec["path"])
    if not p.is_file():
        raise ConfigError(f"network file not found: {p}")
    try:
        return GrnSpec.load(p)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}") from None
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{p}: {exc}") from None


def parse_pmap(rec: dict) -> PerturbationMap:
    return PerturbationMap.from_dict({int(g): s for g, s in rec.items()})
