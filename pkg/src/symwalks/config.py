"""Experiment configuration: JSON schema, loading and model construction."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

import jsonschema
import numpy as np

from .bose import telegraph_generator
from .ensemble import LinearFunctional
from .errors import ConfigError
from .markov import StateSpace, build_generator, lattice_laplacian

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}, "minItems": 1}
_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "model": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["preset"],
                 "properties": {"preset": {"const": "telegraph"}}},
                {"type": "object", "additionalProperties": False, "required": ["preset", "box"],
                 "properties": {
                     "preset": {"const": "lattice"},
                     "box": {"type": "array", "minItems": 1,
                             "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                       "items": {"type": "integer"}}},
                     "boundary": {"enum": ["absorbing", "internal"]},
                     "metric": {"enum": ["l1", "max"]}}},
                {"type": "object", "additionalProperties": False, "required": ["matrix"],
                 "properties": {"matrix": _matrix,
                                "labels": {"type": "array", "minItems": 1}}},
            ]
        },
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "N": {"type": "integer", "minimum": 1},
        "N_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "functional": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "linear": _vector,
                "polynomial": _vector,
                "const": {"type": "number"},
            },
        },
        "p": _vector,
        "kernel": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["transition", "feynman_kac", "boltzmann"]},
                "potential": _vector,
            },
        },
        "ensemble": {"enum": ["bose", "free"]},
        "samples": {"type": "integer", "minimum": 1},
        "chunk": {"type": "integer", "minimum": 1},
        "grid": {"type": "integer", "minimum": 2},
        "trace": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "N_max": {"type": "integer", "minimum": 1, "maximum": 12},
                "permanent_limit": {"type": "integer", "minimum": 1},
            },
        },
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "maxiter": {"type": "integer", "minimum": 1},
            },
        },
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "seed": 0,
    "beta": 1.0,
    "N": 4,
    "N_list": [50, 100, 200, 500],
    "samples": 2000,
    "chunk": 250,
    "grid": 256,
    "ensemble": "bose",
}


def validate(cfg):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as err:
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {err.message}") from None
    return cfg


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from None
    return validate(cfg)


def preset(name):
    """Shipped example config ``name`` (``telegraph`` or ``lattice``)."""
    text = resources.files("symwalks.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return validate(json.loads(text))


def resolve(cfg, seed=None):
    """Validated config with defaults filled in and the seed override applied."""
    validate(cfg)
    out = copy.deepcopy(DEFAULTS)
    out.update(copy.deepcopy(cfg))
    if seed is not None:
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
        out["seed"] = int(seed)
    return out


def config_hash(cfg):
    """SHA-256 of the canonical JSON form."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def boundary(cfg):
    return cfg["model"].get("boundary", "absorbing")


def state_space(cfg):
    m = cfg["model"]
    if m.get("preset") == "lattice":
        return StateSpace.box([tuple(iv) for iv in m["box"]], metric=m.get("metric", "l1"))
    return None


def generator(cfg):
    m = cfg["model"]
    if m.get("preset") == "telegraph":
        return telegraph_generator()
    if m.get("preset") == "lattice":
        return lattice_laplacian(state_space(cfg), boundary(cfg))
    h = np.asarray(m["matrix"], dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ConfigError("model matrix must be square")
    labels = m.get("labels")
    space = None
    if labels is not None:
        if len(labels) != h.shape[0]:
            raise ConfigError("labels must match the matrix size")
        space = StateSpace.abstract(tuple(tuple(v) if isinstance(v, list) else v for v in labels))
    try:
        return build_generator(h, space=space)
    except ValueError as err:
        raise ConfigError(f"bad generator: {err}") from None


def functional(cfg):
    """``(f, spec)``: a ``LinearFunctional`` or a polynomial callable, and a text tag."""
    spec = cfg.get("functional")
    if not spec:
        return LinearFunctional((0.0,)), "0"
    const = float(spec.get("const", 0.0))
    if "linear" in spec and "polynomial" in spec:
        raise ConfigError("give either linear or polynomial coefficients")
    if "linear" in spec:
        c = tuple(float(v) for v in spec["linear"])
        tag = "+".join(f"{v:g}*u{i}" for i, v in enumerate(c))
        return LinearFunctional(c, const), f"{const:g}+{tag}"
    coeffs = [float(v) for v in spec.get("polynomial", [0.0])]
    coeffs[0] += const
    if len(coeffs) <= 2:
        c1 = coeffs[1] if len(coeffs) == 2 else 0.0
        return LinearFunctional((c1,), coeffs[0]), "poly(" + ",".join(f"{v:g}" for v in coeffs) + ")"
    poly = np.polynomial.Polynomial(coeffs)
    return poly, "poly(" + ",".join(f"{v:g}" for v in coeffs) + ")"
