"""Experiment specifications: JSON schema, invariant checks and resolution to solver objects."""
from __future__ import annotations

import copy
import hashlib
import json
import os

import jsonschema

from .errors import ValidationError

KINDS = ("forward", "diffusion", "invert", "spectral-scan", "stability-scan",
         "diffusion-limit-scan")

_COEF = {"oneOf": [{"type": "number"},
                   {"type": "object", "additionalProperties": False,
                    "required": ["csv"], "properties": {"csv": {"type": "string"}}}]}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["coefficients", "source"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "domain": {
            "type": "object", "additionalProperties": False, "required": ["shape"],
            "properties": {"shape": {"enum": ["unit-disk", "rectangle"]},
                           "width": _POS, "height": _POS}},
        "grid": {"type": "object", "additionalProperties": False,
                 "properties": {"h": _POS}},
        "quadrature": {"type": "object", "additionalProperties": False,
                       "properties": {"nv": {"type": "integer", "minimum": 2,
                                             "multipleOf": 2}}},
        "coefficients": {
            "type": "object", "additionalProperties": False, "required": ["sigma_a"],
            "properties": {
                "sigma_a": {"type": "array", "minItems": 1, "items": _COEF},
                "sigma_s": _COEF,
                "D": _COEF,
                "q": {"type": "number"},
                "scattering": {
                    "type": "object", "additionalProperties": False, "required": ["kind"],
                    "properties": {"kind": {"enum": ["isotropic", "henyey-greenstein"]},
                                   "g": {"type": "number", "exclusiveMinimum": -1,
                                         "exclusiveMaximum": 1}}}}},
        "source": {"oneOf": [_POS, {"type": "array", "minItems": 1, "items": _POS}]},
        "epsilons": {"type": "array", "minItems": 1, "items": _POS},
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {"tol_fp": _POS, "tol_si": _POS, "tol_inv": _POS,
                           "tol_diffusion": _POS,
                           "max_iter": {"type": "integer", "minimum": 1},
                           "theta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                           "inner_eta": {"oneOf": [_POS, {"type": "null"}]},
                           "method": {"enum": ["source", "gmres", "direct"]}}},
        "inversion": {
            "type": "object", "additionalProperties": False,
            "properties": {"data": {"type": "array", "items": {"type": "string"}},
                           "noise": {"type": "number", "minimum": 0},
                           "seed": {"type": "integer"},
                           "delta_floor": _POS,
                           "anderson": {"type": "integer", "minimum": 0}}},
        "spectral": {
            "type": "object", "additionalProperties": False,
            "properties": {"beta": {"oneOf": [{"type": "number"}, {"type": "null"}]},
                           "seed": {"type": "integer"},
                           "near_cells": {"type": "integer", "minimum": 0},
                           "diagnostics": {"type": "boolean"}}},
        "stability": {
            "type": "object", "additionalProperties": False,
            "properties": {"regime": {"enum": ["transport", "diffusion"]},
                           "amplitude": {"type": "number"},
                           "width": _POS,
                           "pairs": {"type": "integer", "minimum": 1},
                           "seed": {"type": "integer"},
                           "p": {"type": "array", "minItems": 1,
                                 "items": {"type": "number", "minimum": 1}}}},
        "diffusion_limit": {"type": "object", "additionalProperties": False,
                            "properties": {"interior": _POS}},
    },
}

DEFAULTS = {
    "domain": {"shape": "unit-disk"},
    "grid": {"h": 1 / 32},
    "quadrature": {"nv": 32},
    "coefficients": {"sigma_s": 1.0, "q": 1.0, "scattering": {"kind": "isotropic"}},
    "tolerances": {"tol_fp": 1e-8, "tol_si": 1e-10, "tol_inv": 1e-9, "tol_diffusion": 1e-9,
                   "max_iter": 200, "theta": 1.0, "inner_eta": 1e-3, "method": "gmres"},
    "inversion": {"noise": 0.0, "seed": 0, "anderson": 5},
    "spectral": {"beta": None, "seed": 0, "near_cells": 8, "diagnostics": False},
    "stability": {"regime": "transport", "amplitude": 0.5, "width": 0.15, "pairs": 5,
                  "seed": 0, "p": [1.0, 2.0]},
    "diffusion_limit": {"interior": 0.2},
}

_SCANS = ("spectral-scan", "stability-scan", "diffusion-limit-scan")


def load_spec(path):
    """Parse a JSON spec file; syntax errors carry line and column."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _coef_values(entry):
    return [entry] if isinstance(entry, (int, float)) else []


def diagnose(spec, kind=None, base_dir="."):
    """All schema and invariant problems of ``spec`` as a list of messages (empty if valid)."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(spec), key=lambda e: list(e.absolute_path))
    out = []
    for e in errors:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        out.append(f"{where}: {e.message}")
        if _missing_sigma_a0(e):
            out.append("coefficients/sigma_a/0: missing; invariant violated: "
                       "σ_{a,0} > 0 everywhere")
    if out:
        return out
    declared = spec.get("kind")
    if kind is not None and declared is not None and declared != kind:
        out.append(f"kind: spec declares {declared!r} but the command is {kind!r}")
    kind = kind or declared
    if kind is None:
        out.append("kind: no experiment kind given")
    coeffs = spec["coefficients"]
    for v in _coef_values(coeffs["sigma_a"][0]):
        if not v > 0:
            out.append("coefficients/sigma_a/0: invariant violated: σ_{a,0} > 0 everywhere")
    for k, entry in enumerate(coeffs["sigma_a"][1:], start=1):
        for v in _coef_values(entry):
            if v < 0:
                out.append(f"coefficients/sigma_a/{k}: invariant violated: σ_{{a,{k}}} >= 0")
    for v in _coef_values(coeffs.get("sigma_s", 1.0)):
        if v < 0 or (v == 0 and kind in _SCANS + ("diffusion",)):
            out.append("coefficients/sigma_s: scattering must be positive for this experiment")
    for v in _coef_values(coeffs.get("D", 1.0)):
        if not v > 0:
            out.append("coefficients/D: diffusion coefficient must be positive")
    if coeffs.get("q", 1.0) < 1:
        out.append("coefficients/q: data exponent q < 1 is not supported")
    for name, entry in _csv_entries(spec):
        if not os.path.isfile(os.path.join(base_dir, entry)):
            out.append(f"{name}: file {entry!r} not found")
    src = spec["source"]
    if isinstance(src, list):
        if any(b <= a for a, b in zip(src, src[1:])):
            out.append("source: sources must be strictly ordered, 0 < f_0 < f_1 < ... < f_K "
                       "(monotone-source requirement)")
        if kind not in ("invert", None) and len(src) > 1:
            out.append(f"source: {kind} takes a single source")
    if kind == "invert":
        n_src = len(src) if isinstance(src, list) else 1
        n_coef = len(coeffs["sigma_a"])
        if n_src not in (1, n_coef):
            out.append(f"source: {n_coef} coefficient fields need {n_coef} ordered sources "
                       f"(or one source for the composed absorption only), got {n_src}")
        data = spec.get("inversion", {}).get("data")
        if data is not None and len(data) != n_src:
            out.append("inversion/data: one data file per source")
    if kind in _SCANS:
        regime = spec.get("stability", {}).get("regime", "transport")
        needs_eps = not (kind == "stability-scan" and regime == "diffusion")
        eps = spec.get("epsilons")
        if needs_eps and not eps:
            out.append("epsilons: this scan needs a list of Knudsen numbers")
        if eps and any(b >= a for a, b in zip(eps, eps[1:])):
            out.append("epsilons: the list must be strictly decreasing")
        if not needs_eps and any(True for _ in _csv_entries(spec)):
            out.append("coefficients: grid refinement needs constant coefficients")
    if kind == "spectral-scan" and len(coeffs["sigma_a"]) > 1:
        out.append("coefficients/sigma_a: spectral-scan takes a linear absorption "
                   "(a single coefficient)")
    if coeffs.get("scattering", {}).get("kind") == "henyey-greenstein":
        if "g" not in coeffs["scattering"]:
            out.append("coefficients/scattering: henyey-greenstein needs g")
        if kind in _SCANS:
            out.append("coefficients/scattering: the Knudsen-number scans assume isotropic "
                       "scattering")
    shape = spec.get("domain", {}).get("shape", "unit-disk")
    if shape == "rectangle" and not {"width", "height"} <= set(spec["domain"]):
        out.append("domain: a rectangle needs width and height")
    return out


def _missing_sigma_a0(e):
    path = list(e.absolute_path)
    if e.validator == "required" and "'sigma_a'" in e.message:
        return path == ["coefficients"]
    return e.validator == "minItems" and path == ["coefficients", "sigma_a"]


def _csv_entries(spec):
    coeffs = spec["coefficients"]
    for k, entry in enumerate(coeffs["sigma_a"]):
        if isinstance(entry, dict):
            yield f"coefficients/sigma_a/{k}", entry["csv"]
    for key in ("sigma_s", "D"):
        if isinstance(coeffs.get(key), dict):
            yield f"coefficients/{key}", coeffs[key]["csv"]
    for k, path in enumerate(spec.get("inversion", {}).get("data") or []):
        yield f"inversion/data/{k}", path


def validate(spec, kind=None, base_dir="."):
    diags = diagnose(spec, kind, base_dir)
    if diags:
        raise ValidationError(diags)


def resolve(spec, kind):
    """Spec with every default filled in, the kind recorded and paths left as given."""
    out = copy.deepcopy(DEFAULTS)
    for key, val in spec.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key].update(copy.deepcopy(val))
        else:
            out[key] = copy.deepcopy(val)
    out["kind"] = kind
    return out


def spec_hash(resolved):
    text = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
