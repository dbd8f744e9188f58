"""Experiment configuration: JSON schema, strict loading and object builders."""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from .envelopes import CVaREnvelope, KernelEnvelope, KernelSet, ReferenceEnvelope
from .market import AssetModel, Policy
from .tree import PredictableProcess, ScenarioTree, build_tree

TASKS = ("measure", "deviation", "contrib", "axioms", "consistency", "bsde-mc",
         "example-kappa", "stddev")

_number = {"type": "number"}
_level_entry = {"oneOf": [_number, {"type": "array", "items": _number, "minItems": 1}]}
_rule = {"oneOf": [_number, {"type": "array", "items": _level_entry, "minItems": 1}]}
_vector = {"oneOf": [_number, {"type": "array", "items": _number, "minItems": 1}]}


def _closed(properties, required=()):
    return {"type": "object", "properties": properties, "required": list(required),
            "additionalProperties": False}


def _envelope_case(kind, params, required=()):
    return {"if": {"properties": {"type": {"const": kind}}},
            "then": {"properties": {"params": _closed(params, required)}}}


SCHEMA = _closed({
    "tree": _closed({"steps": {"type": "integer", "minimum": 1},
                     "horizon": {"type": "number", "exclusiveMinimum": 0}},
                    ("steps", "horizon")),
    "model": _closed({"assets": {"type": "array", "minItems": 1, "items": _closed(
        {"drift": _rule, "diffusion": _rule, "s0": _number}, ("drift", "diffusion", "s0"))}},
        ("assets",)),
    "policy": {"type": "object", "additionalProperties": False, "minProperties": 1, "maxProperties": 1,
               "properties": {"constant": _vector,
                              "table": {"type": "array", "minItems": 1, "items": {
                                  "oneOf": [_vector, {"type": "array", "minItems": 1, "items": _vector}]}}}},
    "envelope": {**_closed({"type": {"enum": ["kappa", "interval", "cvar", "reference"]},
                            "params": {"type": "object"}}, ("type",)),
                 "allOf": [
                     _envelope_case("kappa", {"kappa": {"type": "number", "minimum": 0}}, ("kappa",)),
                     _envelope_case("interval", {"lo": {"oneOf": [_number, {"type": "array", "items": _number}]},
                                                 "hi": {"oneOf": [_number, {"type": "array", "items": _number}]},
                                                 "values": {"type": "array", "items": _number, "minItems": 1}}),
                     _envelope_case("cvar", {"lambda": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
                                    ("lambda",)),
                     _envelope_case("reference", {}),
                 ]},
    "tasks": {"type": "array", "items": {"oneOf": [
        {"enum": list(TASKS)},
        _closed({"name": {"enum": list(TASKS)}, "params": {"type": "object"}}, ("name",))]}},
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string", "minLength": 1},
}, ("tree", "envelope", "seed", "output_dir"))


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path to the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
        self.message = message


def _field(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def _deepest(error):
    # descend into oneOf/allOf branches for the most specific message
    while error.context:
        error = max(error.context, key=lambda e: len(e.absolute_path))
    return error


def validate_config(data) -> dict:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = _deepest(errors[0])
        raise ConfigError(_field(err.absolute_path), err.message)
    return data


def load_config(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"not valid JSON ({exc})") from None
    return validate_config(data)


def task_params(config: dict, name: str) -> dict:
    for task in config.get("tasks", []):
        if isinstance(task, dict) and task["name"] == name:
            return dict(task.get("params", {}))
    return {}


def task_names(config: dict) -> list:
    return [t if isinstance(t, str) else t["name"] for t in config.get("tasks", [])]


def build_tree_from(config) -> ScenarioTree:
    return build_tree(config["tree"]["steps"], config["tree"]["horizon"])


def _level_table(tree, block, field):
    """Per-level list of node arrays from a number or a table of (number | per-node list)."""
    if not isinstance(block, list):
        return [np.full(tree.size(k), float(block)) for k in range(tree.steps)]
    if len(block) != tree.steps:
        raise ConfigError(field, f"table needs {tree.steps} level entries, got {len(block)}")
    out = []
    for k, entry in enumerate(block):
        if isinstance(entry, list):
            if len(entry) != tree.size(k):
                raise ConfigError(f"{field}.{k}", f"needs {tree.size(k)} node values, got {len(entry)}")
            out.append(np.asarray(entry, dtype=float))
        else:
            out.append(np.full(tree.size(k), float(entry)))
    return out


def build_model(tree, config) -> AssetModel:
    assets = config.get("model", {"assets": [{"drift": 0.0, "diffusion": 1.0, "s0": 0.0}]})["assets"]
    cols = {}
    for key in ("drift", "diffusion"):
        tables = [_level_table(tree, a[key], f"model.assets.{i}.{key}") for i, a in enumerate(assets)]
        cols[key] = [np.stack([t[k] for t in tables], axis=1) for k in range(tree.steps)]

    def rule(key):
        return lambda level, nodes: cols[key][level][nodes]
    return AssetModel(rule("drift"), rule("diffusion"), [a["s0"] for a in assets])


def _vec(v, dim, field):
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.shape == (1,):
        arr = np.repeat(arr, dim)
    if arr.shape != (dim,):
        raise ConfigError(field, f"needs {dim} entries, got {arr.size}")
    return arr


def build_policy(tree, config, dim) -> Policy:
    block = config.get("policy", {"constant": 1.0})
    if "constant" in block:
        u = _vec(block["constant"], dim, "policy.constant")
        return Policy(PredictableProcess(tree, [np.tile(u, (tree.size(k), 1)) for k in range(tree.steps)]))
    table = block["table"]
    if len(table) != tree.steps:
        raise ConfigError("policy.table", f"needs {tree.steps} level entries, got {len(table)}")
    levels = []
    for k, entry in enumerate(table):
        if isinstance(entry, list) and entry and isinstance(entry[0], list):
            if len(entry) != tree.size(k):
                raise ConfigError(f"policy.table.{k}", f"needs {tree.size(k)} node vectors, got {len(entry)}")
            levels.append(np.stack([_vec(v, dim, f"policy.table.{k}.{i}") for i, v in enumerate(entry)]))
        else:
            levels.append(np.tile(_vec(entry, dim, f"policy.table.{k}"), (tree.size(k), 1)))
    return Policy(PredictableProcess(tree, levels))


def build_envelope(tree, config):
    block = config["envelope"]
    kind, params = block["type"], block.get("params", {})
    if kind == "kappa":
        return KernelEnvelope(KernelSet.kappa(params["kappa"]))
    if kind == "cvar":
        return CVaREnvelope(params["lambda"])
    if kind == "reference":
        return ReferenceEnvelope()
    if "values" in params:
        if "lo" in params or "hi" in params:
            raise ConfigError("envelope.params", "give either lo/hi or values")
        return KernelEnvelope(KernelSet.finite(params["values"]))
    bounds = []
    for key in ("lo", "hi"):
        if key not in params:
            raise ConfigError(f"envelope.params.{key}", "required for an interval envelope")
        v = params[key]
        if isinstance(v, list) and len(v) != tree.steps:
            raise ConfigError(f"envelope.params.{key}", f"table needs {tree.steps} entries, got {len(v)}")
        bounds.append(np.asarray(v, dtype=float) if isinstance(v, list) else float(v))
    lo, hi = bounds
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ConfigError("envelope.params", "lo must not exceed hi")
    return KernelEnvelope(KernelSet.interval(lo, hi))
