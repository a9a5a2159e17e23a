"""Experiment configuration: one strict JSON schema, defaults, full error listing."""
from __future__ import annotations

import copy
import json

from jsonschema import Draft202012Validator

SCHEMA_ID = "statequil.config/1"

KINDS = ("nbody", "maxent", "maxent-sweep", "vlasov", "ensemble-sample", "ensemble-wlln", "classify", "pipeline")

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props, "required": list(required), "default": {}}


POTENTIAL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id"],
    "properties": {
        "id": {"enum": ["harmonic", "softcore", "coulomb", "gravity", "linear", "lennard_jones"]},
        "a": {"type": "number"},
        "b": {"type": "number"},
        "c": {"type": "number"},
        "k": {"type": "number"},
    },
    "default": {"id": "harmonic", "a": 1.0},
}

GRID = _obj({
    "q_extent": {**_pos, "default": 4.5},
    "p_extent": {**_pos, "default": 7.0},
    "points": {"type": "integer", "minimum": 8, "default": 48},
    "p_points": {"type": ["integer", "null"], "minimum": 8, "default": None},
})

PHYSICS = _obj({
    "dim": {"enum": [2, 3], "default": 2},
    "m": {**_pos, "default": 1.0},
    "e2": {**_pos, "default": 1.0},
    "epsilon": {"type": "number", "default": 2.0},
    "ell": {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}], "default": 0.0},
})

SOLVER = _obj({
    "theta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1, "default": 0.5},
    "inner_tol": {**_pos, "default": 1e-8},
    "temperature_tol": {**_pos, "default": 1e-10},
    "max_iter": {**_posint, "default": 2000},
})

NBODY = _obj({
    "n": {"type": "integer", "minimum": 2, "default": 64},
    "dt": {**_pos, "default": 1e-3},
    "steps": {**_posint, "default": 1000},
    "record_every": {"type": "integer", "minimum": 0, "default": 10},
    "q_scale": {**_pos, "default": 1.0},
    "p_scale": {**_pos, "default": 1.0},
    "energy_window": {"type": ["integer", "null"], "minimum": 1, "default": None},
})

VLASOV = _obj({
    "dt": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
    "steps": {"type": ["integer", "null"], "minimum": 1, "default": None},
    "dynamical_times": {**_pos, "default": 10.0},
    "steps_per_dynamical_time": {**_posint, "default": 10},
    "audit_every": {**_posint, "default": 1},
    "init": {"enum": ["maxent", "file"], "default": "maxent"},
    "init_file": {"type": ["string", "null"], "default": None},
    "snapshot": {"type": "boolean", "default": False},
})

ENSEMBLE = _obj({
    "n": {"type": "integer", "minimum": 2, "default": 3},
    "energy": {"type": ["number", "null"], "default": None},
    "mode": {"enum": ["exact", "shell"], "default": "exact"},
    "samples": {**_posint, "default": 10000},
    "burn_in": {"type": "integer", "minimum": 0, "default": 2000},
    "chains": {**_posint, "default": 64},
    "step": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
    "delta_rel": {**_pos, "default": 1e-3},
    "rescale": {"type": "boolean", "default": False},
    "ell_list": {"type": "array", "items": _posint, "minItems": 2, "default": [1, 4, 16, 64, 256]},
    "repeats": {"type": "integer", "minimum": 2, "default": 40},
    "reference_samples": {**_posint, "default": 100000},
    "bins": {"type": "integer", "minimum": 2, "default": 4},
    "n_list": {"type": "array", "items": {"type": "integer", "minimum": 3}, "minItems": 1, "default": [8, 16, 32]},
    "particles_per_n": {**_posint, "default": 640000},
})

CLASSIFY = _obj({
    "tol_stationary": {**_pos, "default": 1e-2},
    "tol_velocity": {**_pos, "default": 1e-8},
    "shift_q_cells": {"type": "array", "items": {"type": "integer"}, "default": []},
    "shift_p_cells": {"type": "array", "items": {"type": "integer"}, "default": []},
    "density_file": {"type": ["string", "null"], "default": None},
})

SWEEP = _obj({
    "epsilon": {"type": "array", "items": {"type": "number"}, "default": []},
    "ell": {"type": "array", "items": {"type": "number"}, "default": []},
})

TOLERANCES = _obj({
    "constraint": {**_pos, "default": 1e-4},
    "momentum_drift": {**_pos, "default": 1e-10},
    "angmom_drift": {**_pos, "default": 1e-10},
    "energy_drift": {**_pos, "default": 1e-6},
    "vlasov_mass": {**_pos, "default": 1e-9},
    "vlasov_energy": {**_pos, "default": 1e-3},
    "vlasov_angmom": {**_pos, "default": 1e-3},
    "vlasov_entropy": {**_pos, "default": 1e-2},
    "vlasov_casimir": {**_pos, "default": 1e-2},
    "ks_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1, "default": 0.01},
    "slope_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2, "default": [-0.7, -0.3]},
})

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": SCHEMA_ID,
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "schema": {"const": SCHEMA_ID, "default": SCHEMA_ID},
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0, "default": 0},
        "output": {"type": "string", "default": "out"},
        "potential": POTENTIAL,
        "physics": PHYSICS,
        "grid": GRID,
        "solver": SOLVER,
        "nbody": NBODY,
        "vlasov": VLASOV,
        "ensemble": ENSEMBLE,
        "classify": CLASSIFY,
        "sweep": SWEEP,
        "tolerances": TOLERANCES,
    },
}


class ConfigError(ValueError):
    """Schema violations; ``errors`` is a list of ``{"path", "message"}`` dicts."""

    def __init__(self, errors: list[dict]):
        self.errors = errors
        super().__init__("; ".join(f"{e['path']}: {e['message']}" for e in errors))

    def as_json(self) -> str:
        return json.dumps({"error": "config-invalid", "schema": SCHEMA_ID, "violations": self.errors}, indent=2)


def _fill(schema: dict, value):
    if schema.get("type") == "object" and isinstance(value, dict):
        for key, sub in schema.get("properties", {}).items():
            if key not in value and "default" in sub:
                value[key] = copy.deepcopy(sub["default"])
            if key in value:
                value[key] = _fill(sub, value[key])
    return value


def _path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        parts += extra[:1]
    return "/" + "/".join(parts)


def validate(data) -> dict:
    """Validate a config (JSON text or dict) and return it fully defaulted.

    Raises :class:`ConfigError` listing every violation, sorted by path.
    """
    if isinstance(data, (str, bytes)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError([{"path": "/", "message": f"invalid JSON: {exc}"}]) from None
    validator = Draft202012Validator(SCHEMA)
    errors = sorted(
        ({"path": _path(e), "message": e.message} for e in validator.iter_errors(data)),
        key=lambda e: (e["path"], e["message"]),
    )
    if errors:
        raise ConfigError(errors)
    cfg = _fill(SCHEMA, copy.deepcopy(data))
    _check_semantics(cfg)
    return cfg


def _check_semantics(cfg: dict) -> None:
    errs = []
    dim = cfg["physics"]["dim"]
    ell = cfg["physics"]["ell"]
    if dim == 2 and isinstance(ell, list):
        errs.append({"path": "/physics/ell", "message": "ell must be a scalar for dim 2"})
    if dim == 3 and not isinstance(ell, list) and ell != 0:
        errs.append({"path": "/physics/ell", "message": "ell must be a 3-vector for dim 3"})
    if cfg["kind"] in ("vlasov",) and dim != 2:
        errs.append({"path": "/physics/dim", "message": "Vlasov evolution supports dim 2 only"})
    if cfg["vlasov"]["init"] == "file" and not cfg["vlasov"]["init_file"]:
        errs.append({"path": "/vlasov/init_file", "message": "required when init is 'file'"})
    lo, hi = cfg["tolerances"]["slope_range"]
    if lo >= hi:
        errs.append({"path": "/tolerances/slope_range", "message": "lower bound must be below upper bound"})
    ells = cfg["ensemble"]["ell_list"]
    if any(b <= a for a, b in zip(ells, ells[1:])):
        errs.append({"path": "/ensemble/ell_list", "message": "sample sizes must be increasing"})
    if errs:
        raise ConfigError(errs)


def physics_ell(cfg: dict):
    ell = cfg["physics"]["ell"]
    if cfg["physics"]["dim"] == 3 and not isinstance(ell, list):
        return [0.0, 0.0, float(ell)]
    return ell
