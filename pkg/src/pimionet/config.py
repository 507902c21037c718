"""Run configuration: JSON document, published schema, layered resolution.

Precedence is command-line flag > config file > built-in default. Unknown keys
are rejected everywhere. Load intensities are given in kN/m here and converted
to N/m when the generation config is built.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .dynamics import IntegratorConfig
from .fem import Material, RayleighCoefficients, TrussGeometry
from .mionet import ArchConfig
from .pipeline import AxleConfig, GenerationConfig
from .training import GRADIENT_MODES, STRATEGIES, TrainingConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "deterministic": False,
    "threads": 1,
    "output_dir": "run",
    "structure": {
        "span": 20.0, "height": 5.0, "panels": 4, "chord_divisions": 4, "vertical_divisions": 3,
        "diagonal_divisions": 4, "section_height": 0.4, "section_width": 0.25,
        "shear_factor": 5.0 / 6.0, "youngs_modulus": 210e9, "poisson_ratio": 0.3,
        "density": 7850.0, "lumped_mass": False,
    },
    "rayleigh": {"a_R": 0.1, "b_R": 0.05},
    "scenarios": {
        "velocities": [10.0, 15.0, 20.0, 25.0],
        "loads_per_case": 50,
        "load_range_kN_per_m": [5.0, 30.0],
        "load_length": 2.0,
        "axle_configs": [{"name": "single", "count": 1, "spacing": 0.0, "pattern": "uniform", "ramp": 0.5}],
    },
    "integrator": {"dt": 0.01, "duration": 2.5, "tail": 0.3, "alpha": -0.05},
    "pipeline": {
        "n_steps": 56, "trim_threshold": 1e-6, "trim_consecutive": 3, "resample_mode": "regenerate",
        "train_ratio": 0.3, "schur_nodes": None, "schur_count": 5, "highres_factor": 2,
    },
    "arch": {"hidden": 200, "layers": 6, "activation": "relu"},
    "training": {
        "strategy": "dd-full", "w1": 1.0, "w2": None, "lr": 5e-4, "batch_size": 20, "epochs": 5000,
        "gradient_mode": "through", "checkpoint_every": 0,
    },
    "sweep": {"neurons": [25, 50, 100, 200], "epochs": 200},
    "report": {"snapshot_times": [0.57, 1.52], "snapshot_sample": None, "speedup_target": 100.0},
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}


def _obj(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "pimionet run configuration",
    **_obj({
        "seed": {"type": "integer", "minimum": 0},
        "deterministic": {"type": "boolean"},
        "threads": _int1,
        "output_dir": {"type": "string", "minLength": 1},
        "structure": _obj({
            "span": _pos, "height": _pos, "panels": {"type": "integer", "minimum": 2},
            "chord_divisions": _int1, "vertical_divisions": _int1, "diagonal_divisions": _int1,
            "section_height": _pos, "section_width": _pos,
            "shear_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "youngs_modulus": _pos, "poisson_ratio": {"type": "number", "minimum": -1, "exclusiveMaximum": 0.5},
            "density": _pos, "lumped_mass": {"type": "boolean"},
        }),
        "rayleigh": _obj({"a_R": {"type": "number", "minimum": 0}, "b_R": {"type": "number", "minimum": 0}}),
        "scenarios": _obj({
            "velocities": {"type": "array", "items": _pos},
            "loads_per_case": {"type": "integer", "minimum": 0},
            "load_range_kN_per_m": {"type": "array", "items": {"type": "number", "minimum": 0},
                                    "minItems": 2, "maxItems": 2},
            "load_length": _pos,
            "axle_configs": {"type": "array", "items": _obj({
                "name": {"type": "string"}, "count": _int1, "spacing": {"type": "number", "minimum": 0},
                "pattern": {"enum": ["uniform", "increasing", "decreasing"]},
                "ramp": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            }, ("name",))},
        }),
        "integrator": _obj({"dt": _pos, "duration": _pos, "tail": {"type": "number", "minimum": 0},
                            "alpha": {"type": "number", "minimum": -1.0 / 3.0, "maximum": 0}}),
        "pipeline": _obj({
            "n_steps": {"type": "integer", "minimum": 2}, "trim_threshold": _pos, "trim_consecutive": _int1,
            "resample_mode": {"enum": ["regenerate", "interpolate", "drop"]},
            "train_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "schur_nodes": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 0}},
            "schur_count": _int1, "highres_factor": _int1,
        }),
        "arch": _obj({"hidden": _int1, "layers": _int1, "activation": {"enum": ["relu", "tanh", "sin"]}}),
        "training": _obj({
            "strategy": {"enum": list(STRATEGIES)}, "w1": {"type": "number", "minimum": 0},
            "w2": {"type": ["number", "null"], "minimum": 0}, "lr": _pos, "batch_size": _int1,
            "epochs": {"type": "integer", "minimum": 0}, "gradient_mode": {"enum": list(GRADIENT_MODES)},
            "checkpoint_every": {"type": "integer", "minimum": 0},
        }),
        "sweep": _obj({
            "neurons": {"type": "array", "items": _int1, "minItems": 1},
            "layers": {"type": "array", "items": _int1, "minItems": 1},
            "batch_size": {"type": "array", "items": _int1, "minItems": 1},
            "lr": {"type": "array", "items": _pos, "minItems": 1},
            "activation": {"type": "array", "items": {"enum": ["relu", "tanh", "sin"]}, "minItems": 1},
            "epochs": {"type": "integer", "minimum": 1},
        }),
        "report": _obj({
            "snapshot_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
            "snapshot_sample": {"type": ["integer", "null"], "minimum": 0},
            "speedup_target": _pos,
        }),
    }),
}


class ConfigError(ValueError):
    """Malformed or schema-violating configuration."""


def validate(doc: Mapping) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc


def merge(base: Mapping, override: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_file(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    validate(doc)
    return doc


def resolve(path: str | Path | None = None, overrides: Mapping | None = None) -> dict:
    """Defaults, then the file, then flag overrides; the result is validated."""
    doc = merge(DEFAULTS, load_file(path)) if path else copy.deepcopy(DEFAULTS)
    doc = merge(doc, overrides or {})
    validate(doc)
    return doc


# -- typed views --------------------------------------------------------------

def geometry(doc: Mapping) -> TrussGeometry:
    s = doc["structure"]
    return TrussGeometry(
        span=s["span"], height=s["height"], panels=s["panels"], chord_divisions=s["chord_divisions"],
        vertical_divisions=s["vertical_divisions"], diagonal_divisions=s["diagonal_divisions"],
        section_height=s["section_height"], section_width=s["section_width"], shear_factor=s["shear_factor"],
        material=Material(s["youngs_modulus"], s["poisson_ratio"], s["density"]), lumped_mass=s["lumped_mass"])


def generation(doc: Mapping) -> GenerationConfig:
    sc, it, pl = doc["scenarios"], doc["integrator"], doc["pipeline"]
    lo, hi = sc["load_range_kN_per_m"]
    return GenerationConfig(
        velocities=tuple(sc["velocities"]), loads_per_case=sc["loads_per_case"],
        load_range=(lo * 1e3, hi * 1e3),
        axle_configs=tuple(AxleConfig(**a) for a in sc["axle_configs"]), load_length=sc["load_length"],
        dt=it["dt"], duration=it["duration"], tail=it["tail"], alpha=it["alpha"], n_steps=pl["n_steps"],
        trim_threshold=pl["trim_threshold"], trim_consecutive=pl["trim_consecutive"],
        resample_mode=pl["resample_mode"], train_ratio=pl["train_ratio"], seed=doc["seed"],
        geometry=geometry(doc), rayleigh=RayleighCoefficients(doc["rayleigh"]["a_R"], doc["rayleigh"]["b_R"]),
        schur_count=pl["schur_count"],
        schur_nodes=None if pl["schur_nodes"] is None else tuple(pl["schur_nodes"]),
        threads=doc["threads"])


def integrator(doc: Mapping) -> IntegratorConfig:
    return IntegratorConfig(doc["integrator"]["dt"], doc["integrator"]["alpha"])


def training(doc: Mapping, schur_nodes=None) -> TrainingConfig:
    t = doc["training"]
    nodes = doc["pipeline"]["schur_nodes"] if schur_nodes is None else schur_nodes
    return TrainingConfig(strategy=t["strategy"], w1=t["w1"], w2=t["w2"], lr=t["lr"],
                          batch_size=t["batch_size"], epochs=t["epochs"], seed=doc["seed"],
                          schur_nodes=None if nodes is None else tuple(nodes),
                          gradient_mode=t["gradient_mode"], checkpoint_every=t["checkpoint_every"],
                          deterministic=doc["deterministic"])


def arch(doc: Mapping, n_branch: int, coord_dim: int, n_out: int) -> ArchConfig:
    a = doc["arch"]
    return ArchConfig.rectangular(n_branch, coord_dim, a["hidden"], a["layers"], n_out, a["activation"],
                                  doc["seed"])


def write_resolved(doc: Mapping, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
    return path


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=1)
