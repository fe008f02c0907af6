"""Experiment configuration: JSON schema, loading, and object construction."""

import copy
import json
import os

import jsonschema
import numpy as np

from . import transforms as tf
from .errors import ConfigError
from .generator import load_model, random_linear, random_mlp
from .io import load_tensor, load_vector

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_shape = {"type": "array", "items": _pos_int, "minItems": 3, "maxItems": 3}
_lam = {"oneOf": [{"type": "number", "minimum": 0},
                  {"type": "array", "items": {"type": "number", "minimum": 0},
                   "minItems": 2, "maxItems": 2}]}

_MODEL = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["path"],
         "properties": {"path": {"type": "string"}}},
        {"type": "object", "additionalProperties": False,
         "required": ["kind", "latent_dim", "output_shape"],
         "properties": {
             "kind": {"enum": ["mlp", "linear"]},
             "latent_dim": _pos_int,
             "output_shape": _shape,
             "hidden": {"type": "array", "items": _pos_int},
             "slope": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
             "seed": {"type": "integer", "minimum": 0},
         }},
    ]
}

_TRANSFORM = {
    "type": "object",
    "required": ["type"],
    "oneOf": [
        {"properties": {"type": {"const": "identity"}}, "additionalProperties": False},
        {"properties": {"type": {"const": "rowconv"},
                        "kernel": {"type": "array", "items": _num, "minItems": 1}},
         "required": ["kernel"], "additionalProperties": False},
        {"properties": {"type": {"const": "blur_family"}, "len": _pos_int},
         "required": ["len"], "additionalProperties": False},
        {"properties": {"type": {"const": "mask"}, "path": {"type": "string"},
                        "keep_fraction": {"type": "number", "minimum": 0, "maximum": 1}},
         "additionalProperties": False},
        {"properties": {"type": {"const": "downsample"}, "factor": _pos_int},
         "required": ["factor"], "additionalProperties": False},
        {"properties": {"type": {"const": "channel"},
                        "index": {"type": "integer", "minimum": 0}},
         "required": ["index"], "additionalProperties": False},
        {"properties": {"type": {"const": "channel_set"}}, "additionalProperties": False},
        {"properties": {"type": {"const": "channel_mix"},
                        "weights": {"type": "array", "items": _num, "minItems": 1}},
         "additionalProperties": False},
        {"properties": {"type": {"const": "matrix"}, "path": {"type": "string"}},
         "required": ["path"], "additionalProperties": False},
    ],
}

_METHOD = {
    "oneOf": [
        {"enum": ["proposed-known", "proposed-unknown"]},
        {"type": "object", "additionalProperties": False, "required": ["baseline"],
         "properties": {"baseline": {
             "type": "object", "additionalProperties": False,
             "properties": {"lambda": _lam,
                            "lambda_grid": {"type": "array", "items": _lam, "minItems": 1},
                            "power": {"enum": [1, 2]}}}}},
    ]
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["task"],
    "properties": {
        "task": {"enum": ["restore", "separate", "mmse", "gradcheck", "benchmark"]},
        "model": _MODEL,
        "models": {"type": "array", "items": _MODEL, "minItems": 2, "maxItems": 2},
        "image_shape": _shape,
        "observation": {"type": "object", "additionalProperties": False,
                        "required": ["path"],
                        "properties": {"path": {"type": "string"},
                                       "ground_truth": {"type": "string"}}},
        "synthesis": {"type": "object", "additionalProperties": False,
                      "properties": {"images": _pos_int,
                                     "beta": {"type": "number", "minimum": 0},
                                     "alpha": {"type": "array", "items": _num, "minItems": 1},
                                     "channel": {"type": "integer", "minimum": 0}}},
        "transform": _TRANSFORM,
        "noise": {"type": "object", "additionalProperties": False,
                  "properties": {"beta": {"oneOf": [{"const": "profiled"},
                                                    {"type": "number", "exclusiveMinimum": 0}]},
                                 "exponent_mode": {"enum": ["n", "n+1"]}}},
        "optimizer": {"type": "object", "additionalProperties": False,
                      "properties": {"learning_rate": {"type": "number", "exclusiveMinimum": 0},
                                     "momentum": {"type": "number", "minimum": 0,
                                                  "exclusiveMaximum": 1},
                                     "iterations": {"type": "integer", "minimum": 0},
                                     "epsilon": {"type": "number", "exclusiveMinimum": 0},
                                     "log_every": _pos_int}},
        "restarts": {"type": "object", "additionalProperties": False,
                     "properties": {"restarts": _pos_int,
                                    "selection": {"enum": ["final_objective", "oracle_mse"]}}},
        "unknown_params": {"type": "boolean"},
        "profiling": {"enum": ["profiled", "joint"]},
        "constraint": {"enum": ["none", "sum_to_one"]},
        "mixture": {"type": "object", "additionalProperties": False,
                    "properties": {"alpha": {"type": "array", "items": _num,
                                             "minItems": 2, "maxItems": 2}}},
        "baseline": {"type": "object", "additionalProperties": False, "required": ["lambda"],
                     "properties": {"lambda": _lam, "power": {"enum": [1, 2]}}},
        "methods": {"type": "array", "items": _METHOD, "minItems": 1},
        "mmse": {"type": "object", "additionalProperties": False,
                 "properties": {"samples": _pos_int, "batch_size": _pos_int}},
        "gradcheck": {"type": "object", "additionalProperties": False,
                      "properties": {
                          "objectives": {"type": "array", "minItems": 1, "items": {"enum": [
                              "fixed", "joint", "profiled", "discrete", "separation",
                              "baseline", "baseline_separation"]}},
                          "instances": _pos_int,
                          "latent_dim": {"type": "integer", "minimum": 1, "maximum": 16},
                          "output_shape": _shape,
                          "step": {"type": "number", "exclusiveMinimum": 0}}},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}

_validator = jsonschema.Draft202012Validator(SCHEMA)


def validate(cfg):
    errors = sorted(_validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}")
    task = cfg["task"]
    if task in ("restore", "mmse", "benchmark") and "model" not in cfg and "models" not in cfg:
        raise ConfigError(f"task {task!r} needs 'model'")
    if task == "separate" and "models" not in cfg:
        raise ConfigError("task 'separate' needs 'models'")
    if task != "gradcheck" and "transform" not in cfg and "models" not in cfg:
        raise ConfigError(f"task {task!r} needs 'transform'")
    if task != "gradcheck" and "observation" not in cfg and "synthesis" not in cfg:
        raise ConfigError("need either 'observation' or 'synthesis'")
    return cfg


def load_config(path, overrides=None):
    """Read, apply CLI ``overrides`` and validate. Relative paths resolve against the file."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg = apply_overrides(cfg, overrides or {})
    cfg["_base_dir"] = os.path.dirname(os.path.abspath(path))
    return cfg


def apply_overrides(cfg, overrides):
    cfg = copy.deepcopy(cfg)
    opt = {"iters": "iterations", "lr": "learning_rate", "momentum": "momentum"}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in opt:
            cfg.setdefault("optimizer", {})[opt[key]] = value
        elif key == "restarts":
            cfg.setdefault("restarts", {})["restarts"] = value
        elif key == "exponent_mode":
            cfg.setdefault("noise", {})["exponent_mode"] = value
        elif key == "out":
            cfg["output_dir"] = value
        elif key in ("seed", "unknown_params"):
            cfg[key] = value
        else:
            raise ConfigError(f"unknown override {key!r}")
    base_dir = cfg.pop("_base_dir", None)
    validate(cfg)
    if base_dir is not None:
        cfg["_base_dir"] = base_dir
    return cfg


def _path(cfg, p):
    return p if os.path.isabs(p) else os.path.join(cfg.get("_base_dir", "."), p)


def build_model(cfg, spec):
    if "path" in spec:
        try:
            return load_model(_path(cfg, spec["path"]))
        except OSError as exc:
            raise ConfigError(f"cannot read model: {exc}") from exc
    out = int(np.prod(spec["output_shape"]))
    seed = spec.get("seed", 0)
    if spec["kind"] == "linear":
        return random_linear(spec["latent_dim"], out, seed=seed)
    return random_mlp(spec["latent_dim"], out, tuple(spec.get("hidden", [64])),
                      slope=spec.get("slope", 0.2), seed=seed)


def image_shape(cfg, model=None):
    if "image_shape" in cfg:
        return tf.ImageShape(*cfg["image_shape"])
    specs = cfg.get("models") or [cfg.get("model", {})]
    if "output_shape" in specs[0]:
        return tf.ImageShape(*specs[0]["output_shape"])
    if model is not None:
        return tf.ImageShape(1, model.output_dim, 1)
    raise ConfigError("cannot infer image shape; set 'image_shape'")


def resolve_transform(cfg, shape):
    """Known transform, its unknown-parameter counterpart, and the truth.

    Returns ``(known, unknown, truth)`` where ``truth`` is a dict with
    ``alpha`` or ``index`` for parametric / discrete unknowns.
    """
    spec = cfg["transform"]
    kind = spec["type"]
    synth = cfg.get("synthesis", {})
    try:
        if kind == "identity":
            t = tf.identity(shape.size)
            return t, tf.ParametricFamily([t]), {"alpha": [1.0]}
        if kind == "rowconv":
            kernel = np.asarray(spec["kernel"], float)
            fam = tf.blur_family(kernel.size, shape)
            return tf.RowConv(kernel, shape), fam, {"alpha": kernel}
        if kind == "blur_family":
            fam = tf.blur_family(spec["len"], shape)
            alpha = synth.get("alpha")
            known = None if alpha is None else tf.FrozenFamily(fam, alpha)
            return known, fam, {"alpha": alpha}
        if kind == "mask":
            if "path" in spec:
                keep = load_vector(_path(cfg, spec["path"])) > 0.5
            else:
                rng = np.random.Generator(np.random.PCG64(cfg.get("seed", 0)))
                keep = rng.random(shape.size) < spec.get("keep_fraction", 0.5)
            t = tf.Mask(keep)
            return t, tf.ParametricFamily([t]), {"alpha": [1.0]}
        if kind == "downsample":
            t = tf.AvgDownsample(spec["factor"], shape)
            return t, tf.ParametricFamily([t]), {"alpha": [1.0]}
        if kind == "channel":
            t = tf.ChannelSelect(spec["index"], shape)
            return t, tf.channel_set(shape), {"index": spec["index"]}
        if kind == "channel_set":
            dset = tf.channel_set(shape)
            index = synth.get("channel")
            known = None if index is None else dset.candidates[index]
            return known, dset, {"index": index}
        if kind == "channel_mix":
            fam = tf.channel_family(shape)
            weights = spec.get("weights", synth.get("alpha"))
            known = None if weights is None else tf.FrozenFamily(fam, weights)
            return known, fam, {"alpha": weights}
        if kind == "matrix":
            t = tf.GeneralMatrix(load_tensor(_path(cfg, spec["path"])))
            return t, tf.ParametricFamily([t]), {"alpha": [1.0]}
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"bad transform spec {spec}: {exc}") from exc
    raise ConfigError(f"unknown transform type {kind!r}")
