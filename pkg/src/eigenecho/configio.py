"""JSON experiment configuration: schema, validation, object builders.

All physical defaults (E, t, eps, k, the lattice mode) live in the shipped
example configs, not in code. Validation failures surface the JSON path
of the offending field (CLI exit code 2).
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .fields import ConstantField, FourierField, RadialBumpField
from .measure import make_measure
from .metric import build_torus_example, identity_family

_NUMBER = {"type": "number"}
_COEFF = {
    "oneOf": [
        {"type": "number"},
        {
            "type": "object",
            "properties": {"fourier": {"type": "array", "items": {
                "type": "array", "minItems": 4, "maxItems": 4,
                "items": {"type": "number"}}}},
            "required": ["fourier"],
            "additionalProperties": False,
        },
    ]
}
_POINT = {"type": "array", "minItems": 2, "maxItems": 2, "items": _NUMBER}
_MODE = {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "integer"}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": 1},
        "label": {"type": "string"},
        "family": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["torus-example", "identity"]},
                "a1": _COEFF, "b1": _COEFF, "a2": _COEFF, "b2": _COEFF,
                "a3": _COEFF,
                "bump": {
                    "oneOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "properties": {"center": _POINT, "radius": {
                                "type": "number", "exclusiveMinimum": 0}},
                            "required": ["center", "radius"],
                            "additionalProperties": False,
                        },
                    ]
                },
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind", "epsilon"],
            "additionalProperties": False,
        },
        "potential": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["zero", "constant", "fourier", "bump"]},
                "value": _NUMBER,
                "terms": {"type": "array", "items": {
                    "type": "array", "minItems": 4, "maxItems": 4,
                    "items": {"type": "number"}}},
                "center": _POINT,
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "amplitude": _NUMBER,
            },
            "required": ["kind"],
        },
        "measure": {
            "type": "object",
            "properties": {
                "profile": {"const": "plateau"},
                "nodes_per_dim": {"type": "integer", "minimum": 5},
                "method": {"enum": ["tensor", "qmc"]},
                "qmc_m": {"type": "integer", "minimum": 3},
                "qmc_replicates": {"type": "integer", "minimum": 2},
            },
            "required": ["profile"],
            "additionalProperties": False,
        },
        "quantum": {
            "type": "object",
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "krylov_dim": {"type": "integer", "minimum": 2},
                "theta_max": {"type": "number", "exclusiveMinimum": 0},
                "grid_N": {"type": ["integer", "null"], "minimum": 4},
            },
            "additionalProperties": False,
        },
        "classical": {
            "type": "object",
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "s_max": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "params": {
            "type": "object",
            "properties": {
                "E": {"type": "number", "exclusiveMinimum": 0},
                "t": _NUMBER,
                "x": _POINT,
                "m": _MODE,
                "u": {"type": "array", "items": _NUMBER},
                "z0": {
                    "type": "object",
                    "properties": {"x": _POINT, "xi": _POINT},
                    "required": ["x", "xi"],
                    "additionalProperties": False,
                },
                "t_grid": {
                    "type": "object",
                    "properties": {
                        "stop": _NUMBER,
                        "num": {"type": "integer", "minimum": 2},
                    },
                    "required": ["stop", "num"],
                    "additionalProperties": False,
                },
                "p_max": {"type": "integer", "minimum": 1},
                "p_list": {"type": "array", "items": {"type": "integer"}},
                "m_list": {"type": "array", "items": _MODE, "minItems": 1},
                "uprime_indices": {
                    "type": "array", "minItems": 2, "maxItems": 2,
                    "items": {"type": "integer", "minimum": 0},
                },
                "beta": {
                    "type": "object",
                    "properties": {
                        "mode": {"enum": ["fixed-covector", "liouville"]},
                        "n_theta": {"type": "integer", "minimum": 4},
                        "n_uprime": {"type": "integer", "minimum": 6},
                        "n_udd": {"type": "integer", "minimum": 6},
                    },
                    "additionalProperties": False,
                },
                "admissibility": {
                    "type": "object",
                    "properties": {
                        "sample_budget": {"type": "integer", "minimum": 64},
                        "det_floor": {"type": "number", "exclusiveMinimum": 0},
                        "x_patch": {
                            "oneOf": [
                                {"type": "null"},
                                {
                                    "type": "object",
                                    "properties": {
                                        "center": _POINT,
                                        "radius": {"type": "number",
                                                   "exclusiveMinimum": 0},
                                    },
                                    "required": ["center", "radius"],
                                    "additionalProperties": False,
                                },
                            ]
                        },
                    },
                    "additionalProperties": False,
                },
                "uprime_diag": {
                    "type": "object",
                    "properties": {
                        "n_nodes": {"type": "integer", "minimum": 1},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
    },
    "required": ["schema_version", "family", "measure", "params"],
    "additionalProperties": False,
}


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", path=str(path))
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {err.message}", path=where)
    return cfg


def _coeff_field(v):
    if isinstance(v, dict):
        return FourierField(v["fourier"])
    return float(v)


def build_potential(cfg):
    pot = cfg.get("potential", {"kind": "zero"})
    kind = pot["kind"]
    if kind == "zero":
        return ConstantField(0.0)
    if kind == "constant":
        return ConstantField(pot.get("value", 0.0))
    if kind == "fourier":
        return FourierField(pot.get("terms", []))
    if kind == "bump":
        return RadialBumpField(pot["center"], pot["radius"],
                               pot.get("amplitude", 1.0))
    raise ConfigError(f"unknown potential kind {kind!r}", path="potential/kind")


def build_family(cfg):
    fam_cfg = cfg["family"]
    potential = build_potential(cfg)
    if fam_cfg["kind"] == "identity":
        return identity_family(epsilon=fam_cfg["epsilon"], potential=potential)
    bump = fam_cfg.get("bump")
    bump_arg = None if bump is None else (tuple(bump["center"]), bump["radius"])
    return build_torus_example(
        _coeff_field(fam_cfg.get("a1", 1.0)),
        _coeff_field(fam_cfg.get("b1", 0.0)),
        _coeff_field(fam_cfg.get("a2", 0.0)),
        _coeff_field(fam_cfg.get("b2", 1.0)),
        _coeff_field(fam_cfg.get("a3", 1.0)),
        epsilon=fam_cfg["epsilon"],
        bump=bump_arg,
        potential=potential,
        label=cfg.get("label", "torus-example"),
    )


def build_measure(cfg, family):
    mcfg = cfg["measure"]
    return make_measure(family.k, family.epsilon, profile=mcfg["profile"])


def quantum_kwargs(cfg):
    q = cfg.get("quantum", {})
    return {
        "tol": q.get("tol", 1e-9),
        "krylov_dim": q.get("krylov_dim", 24),
        "theta_max": q.get("theta_max", 20.0),
    }


def write_example_config(path):
    cfg = {
        "schema_version": 1,
        "label": "example-torus",
        "family": {
            "kind": "torus-example",
            "a1": 1.0, "b1": 0.0, "a2": 0.0, "b2": 1.0, "a3": 1.0,
            "bump": {"center": [1.0, 2.0], "radius": 2.5},
            "epsilon": 0.05,
        },
        "potential": {"kind": "zero"},
        "measure": {"profile": "plateau", "nodes_per_dim": 11},
        "quantum": {"tol": 1e-9, "krylov_dim": 24, "theta_max": 20.0},
        "classical": {"tol": 1e-12, "s_max": 2.0},
        "params": {
            "E": 1.0, "t": 0.1, "x": [1.0, 2.0], "m": [3, 4],
            "u": [0.02, 0.01, 0.03],
            "z0": {"x": [1.0, 2.0], "xi": [0.6, 0.8]},
            "t_grid": {"stop": 0.5, "num": 26},
            "p_max": 3,
            "p_list": [1, 3],
            "m_list": [[3, 4], [5, 12], [7, 24]],
            "beta": {"mode": "fixed-covector", "n_uprime": 24, "n_udd": 24,
                     "n_theta": 32},
            "admissibility": {"sample_budget": 16384, "det_floor": 1e-6,
                              "x_patch": None},
            "uprime_diag": {"n_nodes": 200},
        },
        "seed": 0,
        "workers": 1,
    }
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return cfg
