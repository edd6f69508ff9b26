"""Experiment configs: JSON schema, validation and input resolution."""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import TreeRateError

EXPERIMENTS = ("lansit-check", "divergence", "compare-bound", "indisp", "entropy-rate", "kakutani", "perturb-sim")

BUNDLED_PREFIX = "bundled:"

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_prob = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_input = {"type": ["string", "object"]}
_length = {"enum": ["unit", "table", "hq"]}
_every = {"type": "integer", "minimum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


PARAMS = {
    "lansit-check": _obj({"trials": _pos_int, "max_nodes": {"type": "integer", "minimum": 3},
                          "max_degree": {"type": "integer", "minimum": 2}, "tolerance": _num}),
    "divergence": _obj({"length": _length}),
    "compare-bound": _obj({
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "epsilon": {"type": "number", "minimum": 0},
        "section": {"type": ["array", "null"], "items": {"type": ["string", "integer"]}},
        "length": _length,
        "report": {"type": ["string", "null"]},
    }),
    "indisp": _obj({"theta": _prob, "d1": {"type": "integer", "minimum": 2}, "d2": {"type": "integer", "minimum": 2},
                    "levels": _pos_int, "explicit_max": {"type": "integer", "minimum": 0}},
                   ["theta", "d1", "d2", "levels"]),
    "entropy-rate": _obj({"levels": _pos_int, "every": _every}, ["levels"]),
    "kakutani": _obj({"M": {"type": "integer", "minimum": 2}, "beta": {"type": "number", "exclusiveMinimum": 0},
                      "alphas": {"type": ["array", "string"]}, "levels": _pos_int, "every": _every},
                     ["M", "levels"]),
    "perturb-sim": _obj({
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "constant": {"type": "number", "minimum": 0, "maximum": 1},
        "deltas": {"type": ["array", "string"]},
        "trials": _pos_int, "levels": _pos_int,
        "length": {"type": ["string", "number"]},
        "D": {"type": ["number", "null"]}, "h": {"type": ["number", "null"]},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "every": _every,
    }, ["levels"]),
}

INPUTS = {
    "lansit-check": _obj({"tree": _input, "law": _input, "f": _input}),
    "divergence": _obj({"tree": _input, "p": _input, "q": _input}, ["tree", "p", "q"]),
    "compare-bound": _obj({"tree": _input, "p": _input, "q": _input}, ["tree", "p", "q"]),
    "indisp": _obj({}),
    "entropy-rate": _obj({"p": _input, "q": _input}, ["p", "q"]),
    "kakutani": _obj({}),
    "perturb-sim": _obj({"base": _input, "alt": _input}),
}

TOP = _obj({
    "experiment": {"enum": list(EXPERIMENTS)},
    "seed": {"type": "integer", "minimum": 0},
    "output": {"type": ["string", "null"]},
    "inputs": {"type": "object"},
    "params": {"type": "object"},
}, ["experiment"])


class ConfigError(TreeRateError):
    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


def _pointer(err: jsonschema.ValidationError, prefix: str = "") -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            parts.append(extra[0])
    return prefix + "".join("/" + p for p in parts)


def _check(schema: dict, obj, prefix: str):
    v = jsonschema.Draft202012Validator(schema)
    errors = sorted(v.iter_errors(obj), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = jsonschema.exceptions.best_match(errors)
        raise ConfigError(_pointer(e, prefix), e.message)


def validate(config) -> dict:
    """Validate a config and return it with defaults for the optional blocks."""
    if not isinstance(config, dict):
        raise ConfigError("", "config must be a JSON object")
    _check(TOP, config, "")
    exp = config["experiment"]
    _check(INPUTS[exp], config.get("inputs", {}), "/inputs")
    _check(PARAMS[exp], config.get("params", {}), "/params")
    p = config.get("params", {})
    if exp == "kakutani" and ("beta" in p) == ("alphas" in p):
        raise ConfigError("/params", "give exactly one of beta and alphas")
    if exp == "perturb-sim" and sum(k in p for k in ("beta", "constant", "deltas")) != 1:
        raise ConfigError("/params", "give exactly one of beta, constant and deltas")
    return {"seed": 0, "output": None, "inputs": {}, "params": {}, **config}


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def load_json(ref, base_dir: Path | None = None):
    """Inline objects pass through; strings are paths or ``bundled:<name>``."""
    if not isinstance(ref, str):
        return ref
    try:
        if ref.startswith(BUNDLED_PREFIX):
            text = resources.files("treerate.data").joinpath(ref[len(BUNDLED_PREFIX):]).read_text()
        else:
            path = Path(ref)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            text = path.read_text()
    except (FileNotFoundError, IsADirectoryError) as e:
        raise TreeRateError(f"cannot read input {ref!r}: {e.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise TreeRateError(f"{ref!r} is not valid JSON: {e}") from None
