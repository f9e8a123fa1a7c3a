"""Run configuration: defaults, JSON schema validation and object builders.

Configs are JSON documents. Missing sections are filled from
:data:`DEFAULTS`; validation errors report the offending field and, where
the field appears in the source text, its line number.
"""

from __future__ import annotations

import copy
import json
import re
from pathlib import Path

import jsonschema

from .errors import ConfigError, DataError
from .fusion import BRANCHES, FusionParams, TemperatureClamp
from .geometry import FrameSize
from .mpm import MpmConfig
from .optim import AdamW, LrSchedule
from .sim import BranchProfile, ObjectScript, Scenario

DEFAULTS = {
    "seed": 0,
    "scenario": {
        "width": 64,
        "height": 48,
        "frames": 30,
        "objects": [],
    },
    "branches": {
        "C": {"noise_std": 1.5, "dropout_prob": 0.05, "distractor_gain": 0.0},
        "S": {"noise_std": 1.5, "dropout_prob": 0.0, "distractor_gain": 0.6},
        "M-": {"noise_std": 1.0, "dropout_prob": 0.0, "distractor_gain": 0.0},
    },
    "mpm": {
        "alpha": 0.9,
        "beta": 0.5,
        "sigma_scale": [0.5, 0.5],
        "epsilon": 1e-6,
        "min_valid_area": 1,
        "adapt_steps": 0,
        "lr": 1e-4,
        "weight_decay": 1e-6,
        "clip_norm": 1.0,
    },
    "fusion": {
        "lr": 1e-5,
        "weight_decay": 1e-4,
        "warmup_steps": 200,
        "total_steps": 2000,
        "clip_norm": 1.0,
        "temp_init": 1.2,
        "temp_min": 0.8,
        "temp_max": 2.0,
        "temp_offset": 1e-3,
    },
    "track": {"branch": "M-", "mpm": True},
    "metrics": {"tolerance": None},
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_point = {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
                "frames": {"type": "integer", "minimum": 1},
                "objects": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["id", "size", "waypoints"],
                        "properties": {
                            "id": {"type": "integer", "minimum": 1, "maximum": 255},
                            "shape": {"enum": ["rectangle", "ellipse"]},
                            "size": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                     "minItems": 2, "maxItems": 2},
                            "waypoints": {
                                "type": "array", "minItems": 1,
                                "items": {"type": "object", "additionalProperties": False,
                                          "required": ["frame", "center"],
                                          "properties": {"frame": {"type": "integer", "minimum": 0},
                                                         "center": _point}},
                            },
                            "occlusions": {
                                "type": "array",
                                "items": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                          "minItems": 2, "maxItems": 2},
                            },
                        },
                    },
                },
            },
        },
        "branches": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                b: {"type": "object", "additionalProperties": False,
                    "properties": {"noise_std": _nonneg, "dropout_prob": _prob, "distractor_gain": _nonneg}}
                for b in ("C", "S", "M-")
            },
        },
        "mpm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "beta": _nonneg,
                "sigma_scale": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
                "epsilon": _pos,
                "min_valid_area": {"type": "integer", "minimum": 1},
                "adapt_steps": {"type": "integer", "minimum": 0},
                "lr": _nonneg,
                "weight_decay": _nonneg,
                "clip_norm": _pos,
            },
        },
        "fusion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": _nonneg,
                "weight_decay": _nonneg,
                "warmup_steps": {"type": "integer", "minimum": 0},
                "total_steps": {"type": "integer", "minimum": 0},
                "clip_norm": _pos,
                "temp_init": _num,
                "temp_min": _pos,
                "temp_max": _pos,
                "temp_offset": _nonneg,
            },
        },
        "track": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"branch": {"enum": list(BRANCHES)}, "mpm": {"type": "boolean"}},
        },
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tolerance": {"oneOf": [{"type": "null"}, _nonneg]}},
        },
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _locate(text: str, path) -> int | None:
    """Best-effort line number of the innermost key along ``path``."""
    pos, line = 0, None
    for part in path:
        if isinstance(part, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(part))).search(text, pos)
        if m is None:
            break
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


def _semantic_checks(cfg: dict, text: str | None):
    def fail(msg, field):
        line = _locate(text, field.split(".")) if text else None
        raise ConfigError(msg, line=line, field=field)

    ids = [o["id"] for o in cfg["scenario"]["objects"]]
    if sorted(ids) != list(range(1, len(ids) + 1)):
        fail(f"object ids must be unique and exactly 1..N, got {sorted(ids)}", "scenario.objects")
    fu = cfg["fusion"]
    if fu["temp_min"] > fu["temp_max"]:
        fail("temp_min exceeds temp_max", "fusion.temp_min")


def validate(cfg: dict, text: str | None = None) -> dict:
    """Fill defaults and validate; raises :class:`ConfigError`."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object", line=1 if text else None)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        line = _locate(text, path) if text else None
        dotted = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(err.message, line=line, field=dotted)
    merged = _merge(DEFAULTS, cfg)
    _semantic_checks(merged, text)
    return merged


def loads_config(text: str) -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    return validate(raw, text)


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads_config(text)


def dumps_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


# builders ---------------------------------------------------------------

def build_scenario(cfg: dict) -> Scenario:
    sc = cfg["scenario"]
    try:
        objects = tuple(
            ObjectScript(
                id=o["id"],
                size=tuple(o["size"]),
                waypoints=tuple((w["frame"], tuple(w["center"])) for w in o["waypoints"]),
                shape=o.get("shape", "rectangle"),
                occlusions=tuple(tuple(iv) for iv in o.get("occlusions", [])),
            )
            for o in sc["objects"]
        )
        branches = {name: BranchProfile(name, **p) for name, p in cfg["branches"].items()}
        return Scenario(FrameSize(sc["width"], sc["height"]), sc["frames"], objects, cfg["seed"], branches)
    except DataError as exc:
        raise ConfigError(str(exc), field="scenario") from None


def build_mpm_config(cfg: dict) -> MpmConfig:
    m = cfg["mpm"]
    return MpmConfig(alpha=m["alpha"], beta=m["beta"], sigma_scale=tuple(m["sigma_scale"]),
                     epsilon=m["epsilon"], min_valid_area=m["min_valid_area"])


def build_fusion(cfg: dict, total_steps: int | None = None):
    """``(initial params, schedule, optimizer, clamp)`` from the fusion section."""
    f = cfg["fusion"]
    total = f["total_steps"] if total_steps is None else total_steps
    schedule = LrSchedule(f["lr"], total, min(f["warmup_steps"], total))
    optimizer = AdamW(lr=f["lr"], weight_decay=f["weight_decay"])
    clamp = TemperatureClamp(f["temp_min"], f["temp_max"], f["temp_offset"])
    return FusionParams.initial(f["temp_init"]), schedule, optimizer, clamp
