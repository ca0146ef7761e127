"""Run configuration: YAML tree, JSON-schema validation, defaults and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import yaml

from .lattice import Kind, LatticeGeometry


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (usage error)."""


_GEOMETRY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "ny"],
    "properties": {
        "kind": {"enum": ["torus", "cylinder", "cut_torus"]},
        "nx_a": {"type": "integer", "minimum": 1},
        "nx_b": {"type": "integer", "minimum": 0},
        "nx": {"type": "integer", "minimum": 1},
        "ny": {"type": "integer", "minimum": 1},
    },
}

_RANGE = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_NUMLIST = {"type": "array", "items": {"type": "number"}}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "z2ent run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "geometry": _GEOMETRY,
        "geometries": {"type": "array", "items": _GEOMETRY},
        "epsilon": {"type": "number", "minimum": 0},
        "epsilons": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "electric_limit": {"type": "boolean"},
        "winding": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"vx": {"enum": [1, -1, None]}, "vy": {"enum": [1, -1, None]}},
        },
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": ["integer", "null"], "minimum": 1},
        "budget_gb": {"type": "number", "exclusiveMinimum": 0},
        "output": {"type": "string"},
        "quench": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon_initial": {"oneOf": [{"type": "number", "minimum": 0}, {"enum": ["infinity", "inf"]}]},
                "epsilon_final": {"type": "number", "exclusiveMinimum": 0},
                "mode": {"enum": ["random_eigenstate", "electric_product"]},
                "seed": {"type": "integer", "minimum": 0},
                "eigen_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "times": {"oneOf": [_NUMLIST, {
                    "type": "object", "additionalProperties": False, "required": ["stop", "num"],
                    "properties": {"start": {"type": "number", "minimum": 0}, "stop": {"type": "number", "minimum": 0},
                                   "num": {"type": "integer", "minimum": 1},
                                   "spacing": {"enum": ["linear", "log"]}}}]},
                "time_unit": {"enum": ["t", "eps_t"]},
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cutoff": {"type": "number", "exclusiveMinimum": 0},
                "unfold_degree": {"type": "integer", "minimum": 1},
                "ratio_bins": {"type": "integer", "minimum": 1},
                "beta_mode": {"enum": ["entropy", "energy"]},
                "gap_points": {"type": "integer", "minimum": 3},
                "gap_window": {"type": ["array", "null"], "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "krylov_dim": {"type": "integer", "minimum": 2},
                "krylov_tol": {"type": "number", "exclusiveMinimum": 0},
                "ground_tol": {"type": "number", "exclusiveMinimum": 0},
                "variational": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "include_boundary": {"type": "boolean"},
                        "tie": {"enum": ["column", "none"]},
                        "init": {"type": "number"},
                        "gtol": {"type": "number", "exclusiveMinimum": 0},
                        "max_evaluations": {"type": "integer", "minimum": 1},
                        "fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    },
                },
                "scaling": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "archive": {"type": ["string", "null"]},
                        "t_ref": {"type": "number"},
                        "t_tests": _NUMLIST,
                        "window": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
                        "alpha": _RANGE,
                        "beta": _RANGE,
                        "eps_t0": _RANGE,
                    },
                },
            },
        },
    },
}

DEFAULTS: dict = {
    "geometry": {"kind": "cut_torus", "nx_a": 3, "nx_b": 3, "ny": 2},
    "geometries": [
        {"kind": "torus", "nx": 2, "ny": 2},
        {"kind": "torus", "nx": 3, "ny": 2},
        {"kind": "cut_torus", "nx_a": 2, "nx_b": 2, "ny": 2},
        {"kind": "cylinder", "nx": 2, "ny": 3},
    ],
    "epsilon": 0.1,
    "epsilons": [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5],
    "electric_limit": False,
    "winding": {"vx": 1, "vy": 1},
    "seed": 0,
    "threads": None,
    "budget_gb": 4.0,
    "output": "z2ent-out",
    "quench": {
        "epsilon_initial": 0.1,
        "epsilon_final": 1.0,
        "mode": "random_eigenstate",
        "seed": 0,
        "eigen_fraction": 0.5,
        "times": {"start": 0.0, "stop": 20.0, "num": 41, "spacing": "linear"},
        "time_unit": "eps_t",
    },
    "analysis": {
        "cutoff": 1e-14,
        "unfold_degree": 3,
        "ratio_bins": 20,
        "beta_mode": "entropy",
        "gap_points": 4,
        "gap_window": None,
        "krylov_dim": 30,
        "krylov_tol": 1e-12,
        "ground_tol": 1e-9,
        "variational": {
            "include_boundary": False,
            "tie": "column",
            "init": 0.1,
            "gtol": 1e-8,
            "max_evaluations": 2000,
            "fraction": 0.5,
        },
        "scaling": {
            "archive": None,
            "t_ref": 6.0,
            "t_tests": [8, 12, 16, 24, 30, 40, 50],
            "window": [130, 1300],
            "alpha": [0.0, 1.6, 0.02],
            "beta": [-0.4, 0.4, 0.02],
            "eps_t0": [0.0, 4.0, 0.1],
        },
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(tree: dict):
    try:
        jsonschema.validate(tree, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None


def parse_value(text: str) -> Any:
    """Scalar or list from a command-line override, parsed as YAML."""
    return yaml.safe_load(text)


def set_key(tree: dict, dotted: str, value: Any):
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {k} is not a mapping")
    node[keys[-1]] = value


@dataclass
class RunConfig:
    """Validated configuration tree with attribute access to common keys."""

    tree: dict

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "RunConfig":
        user: dict = {}
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            try:
                user = yaml.safe_load(text) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"invalid YAML in {path}: {exc}") from None
            if not isinstance(user, dict):
                raise ConfigError("config root must be a mapping")
        validate(user)
        tree = _merge(DEFAULTS, user)
        for k, v in (overrides or {}).items():
            set_key(tree, k, v)
        validate(tree)
        return cls(tree)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        validate(d)
        tree = _merge(DEFAULTS, d)
        validate(tree)
        return cls(tree)

    def __getitem__(self, key: str):
        node = self.tree
        for k in key.split("."):
            node = node[k]
        return node

    def get(self, key: str, default=None):
        try:
            return self[key]
        except (KeyError, TypeError):
            return default

    @property
    def seed(self) -> int:
        return int(self.tree["seed"])

    def canonical(self) -> str:
        return json.dumps(self.tree, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        """Hash of the settings that affect results (output path and threads excluded)."""
        tree = {k: v for k, v in self.tree.items() if k not in ("output", "threads")}
        text = json.dumps(tree, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def geometry(self, node: dict | None = None) -> LatticeGeometry:
        return geometry_from(node or self.tree["geometry"])

    def geometries(self) -> list[LatticeGeometry]:
        nodes = self.tree.get("geometries") or []
        if not nodes:
            raise ConfigError("empty geometry list")
        return [geometry_from(n) for n in nodes]

    def quench_epsilons(self) -> tuple[float, float]:
        q = self.tree["quench"]
        ei = q["epsilon_initial"]
        ei = math.inf if isinstance(ei, str) else float(ei)
        return ei, float(q["epsilon_final"])

    def time_grid(self) -> tuple[list[float], list[float]]:
        """``(t, eps_final * t)`` grids from the quench block."""
        import numpy as np

        q = self.tree["quench"]
        spec = q["times"]
        if isinstance(spec, list):
            grid = np.asarray(spec, float)
        else:
            start, stop, num = float(spec.get("start", 0.0)), float(spec["stop"]), int(spec["num"])
            if spec.get("spacing", "linear") == "log":
                lo = max(start, stop * 1e-3)
                grid = np.concatenate([[0.0] if start == 0 else [], np.geomspace(lo, stop, num - (start == 0))])
            else:
                grid = np.linspace(start, stop, num)
        if np.any(np.diff(grid) < 0) or (len(grid) and grid[0] < 0):
            raise ConfigError("quench.times must be nondecreasing and non-negative")
        eps = self.quench_epsilons()[1]
        if q.get("time_unit", "eps_t") == "eps_t":
            return [float(x) / eps for x in grid], [float(x) for x in grid]
        return [float(x) for x in grid], [float(x) * eps for x in grid]


def geometry_from(node: dict) -> LatticeGeometry:
    kind = node["kind"]
    try:
        if kind == "torus":
            return LatticeGeometry.torus(int(node.get("nx", node.get("nx_a", 0))), int(node["ny"]))
        if kind == "cylinder":
            return LatticeGeometry.cylinder(int(node.get("nx", node.get("nx_a", 0))), int(node["ny"]))
        if kind == "cut_torus":
            return LatticeGeometry.cut_torus(int(node["nx_a"]), int(node["nx_b"]), int(node["ny"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad geometry {node}: {exc}") from None
    raise ConfigError(f"unknown geometry kind {kind}")


def geometry_node(g: LatticeGeometry) -> dict:
    if g.kind is Kind.CUT_TORUS:
        return {"kind": "cut_torus", "nx_a": g.nx_a, "nx_b": g.nx_b, "ny": g.ny}
    if g.kind is Kind.OPEN_CYLINDER:
        return {"kind": "cylinder", "nx": g.nx_a, "ny": g.ny}
    return {"kind": "torus", "nx": g.nx_a, "ny": g.ny}


def write_schema(path: str | Path):
    Path(path).write_text(json.dumps(SCHEMA, indent=2))
