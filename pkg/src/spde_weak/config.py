"""Experiment configuration: TOML file, schema validation, model construction.

Steps are written as exact dyadic rationals (``"1/2^5"``, ``"3/2^4"`` or an
integer) so that ``T / tau`` is checked exactly instead of being rounded.
"""
from __future__ import annotations

import hashlib
import json
import re
import sys
from fractions import Fraction

import jsonschema
import numpy as np

from .model import ModelSpec
from .nonlinear import BUILTINS, builtin
from .oracles import TestFunctional
from .spectral import ConfigurationError, Spectrum

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_DYADIC = re.compile(r"^\s*(\d+)\s*(?:/\s*2\s*\^\s*(\d+)\s*)?$")

_STEP = {"oneOf": [{"type": "string", "pattern": _DYADIC.pattern},
                   {"type": "integer", "minimum": 1}]}
_INIT = {"oneOf": [
    {"type": "string", "enum": ["zero"]},
    {"type": "array", "items": {"type": "number"}},
    {"type": "object", "additionalProperties": False, "required": ["mode", "amplitude"],
     "properties": {"mode": {"type": "integer", "minimum": 0},
                    "amplitude": {"type": "number"}}},
]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "spectrum": {"type": "string", "enum": ["dirichlet"]},
                "n_modes": {"type": "integer", "minimum": 1},
                "grid_size": {"type": "integer", "minimum": 2},
                "nonlinearity": {"type": "string", "enum": sorted(BUILTINS)},
                "params": {"type": "object", "additionalProperties": {"type": "number"}},
                "initial_condition": _INIT,
            },
        },
        "functional": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"type": "string",
                         "enum": ["cos_mode", "exp_neg_sq", "bounded_poly_probe", "constant"]},
                "mode": {"type": "integer", "minimum": 0},
                "a": {"type": "number"},
            },
        },
        "scheme": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "tau": _STEP,
                "tau_grid": {"type": "array", "items": _STEP, "minItems": 1},
                "T": _STEP,
                "m": {"type": "integer", "minimum": 0},
                "refinement_r": {"type": "integer", "minimum": 1},
                "reference": {"type": "string",
                              "enum": ["variance_matched", "left_endpoint", "exact_law"]},
                "steps": {"type": "integer", "minimum": 1},
            },
        },
        "estimator": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 2},
                "burn_in": {"type": "integer", "minimum": 0},
                "M": {"type": "integer", "minimum": 20},
                "n_batches": {"type": "integer", "minimum": 20},
                "check_refinement": {"type": "boolean"},
                "p": {"type": "integer", "enum": [2, 4]},
                "checkpoints": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                "minItems": 2},
                "chunk_size": {"type": "integer", "minimum": 1},
                "proxy_refinement": {"type": "integer", "minimum": 1},
            },
        },
        "contraction": {
            "type": "object", "additionalProperties": False,
            "properties": {"y2": _INIT},
        },
    },
}

REQUIRED = {
    "weak-order": [("scheme", "tau_grid"), ("scheme", "T"), ("estimator", "n_samples")],
    "invariant": [("scheme", "tau_grid"), ("estimator", "burn_in"), ("estimator", "M")],
    "diagnostics": [],
    "moments": [("scheme", "tau"), ("estimator", "n_samples"), ("estimator", "checkpoints")],
    "contraction": [("scheme", "tau"), ("scheme", "steps")],
}


def parse_dyadic(value) -> Fraction:
    """``"p/2^q"`` or an integer to an exact Fraction."""
    if isinstance(value, bool):
        raise ConfigurationError(f"not a dyadic rational: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Fraction):
        return value
    match = _DYADIC.match(str(value))
    if not match:
        raise ConfigurationError(f"not a dyadic rational 'p/2^q': {value!r}")
    p, q = int(match.group(1)), int(match.group(2) or 0)
    return Fraction(p, 2**q)


def load(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None


def validate(cfg: dict, command: str) -> dict:
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(cfg), key=lambda e: e.path)
    if errors:
        msgs = []
        for e in errors:
            where = ".".join(str(p) for p in e.absolute_path) or "<root>"
            msgs.append(f"{where}: {e.message}")
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(msgs))
    for section, key in REQUIRED[command]:
        if key not in cfg.get(section, {}):
            raise ConfigurationError(f"invalid config: missing required key {section}.{key}")
    scheme = cfg.get("scheme", {})
    if "T" in scheme and "tau_grid" in scheme:
        T = parse_dyadic(scheme["T"])
        for t in scheme["tau_grid"]:
            tau = parse_dyadic(t)
            if tau == 0 or (T / tau).denominator != 1:
                raise ConfigurationError(
                    f"invalid config: scheme.tau_grid entry {t!r} does not divide T = {scheme['T']!r}")
    for t in (scheme.get("tau"), *scheme.get("tau_grid", ())):
        if t is not None and parse_dyadic(t) == 0:
            raise ConfigurationError("invalid config: tau must be > 0")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def initial_condition(spec, n_modes: int) -> np.ndarray:
    if spec is None or spec == "zero":
        return np.zeros(n_modes)
    if isinstance(spec, dict):
        if spec["mode"] >= n_modes:
            raise ConfigurationError("initial condition mode exceeds n_modes")
        y = np.zeros(n_modes)
        y[spec["mode"]] = spec["amplitude"]
        return y
    y = np.zeros(n_modes)
    vals = np.asarray(spec, dtype=float)
    if vals.size > n_modes:
        raise ConfigurationError("initial condition has more coefficients than n_modes")
    y[: vals.size] = vals
    return y


def build_model(cfg: dict) -> ModelSpec:
    m = cfg.get("model", {})
    n = m.get("n_modes", 64)
    name = m.get("nonlinearity", "scaled_arctan")
    nl = None if name == "zero" else builtin(name, **m.get("params", {}))
    y0 = initial_condition(m.get("initial_condition"), n)
    return ModelSpec(Spectrum.dirichlet(n), nl, m.get("grid_size"), y0)


def build_functional(cfg: dict) -> TestFunctional:
    f = cfg.get("functional", {})
    kind = f.get("kind", "cos_mode")
    a = f.get("a", 1.0)
    return TestFunctional(kind, f.get("mode", 0), float(a))
