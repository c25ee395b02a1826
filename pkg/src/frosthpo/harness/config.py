"""Run configuration: a JSON document validated against a published schema."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema

from ..fidelity import FidelityAxis, SearchSpace, discretize_axis
from ..microtrainer.network import LayerSpec, dense_arch
from ..microtrainer.tasks import Task, TrainBudget, make_task
from ..scheduler import MemoryModel, SHConfig


class ConfigError(ValueError):
    pass


_AXIS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "kind"],
    "properties": {
        "name": {"enum": ["layers", "data_fraction"]},
        "kind": {"enum": ["integer", "rational"]},
        "min": {"type": "number"},
        "max": {"type": "number"},
        "count": {"type": "integer", "minimum": 2},
        "pattern": {"enum": ["geometric", "uniform"]},
        "levels": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["task", "architecture", "search_space", "fidelity", "budget",
                 "seeds"],
    "properties": {
        "task": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "generator_seed", "n_train", "n_val"],
            "properties": {
                "name": {"type": "string"},
                "generator_seed": {"type": "integer"},
                "n_train": {"type": "integer", "minimum": 1},
                "n_val": {"type": "integer", "minimum": 1},
                "input_dim": {"type": "integer", "minimum": 1},
                "target_dim": {"type": "integer", "minimum": 1},
                "objective": {"enum": ["cross_entropy", "mse"]},
                "noise": {"type": "number", "minimum": 0},
            },
        },
        "architecture": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dims"],
            "properties": {
                "dims": {"type": "array", "items": {"type": "integer", "minimum": 1},
                         "minItems": 2},
                "activation": {"enum": ["relu", "tanh", "identity"]},
                "last_activation": {"enum": ["relu", "tanh", "identity"]},
            },
        },
        "search_space": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {"type": "array", "minItems": 1},
        },
        "fidelity": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axes"],
            "properties": {"axes": {"type": "array", "items": _AXIS_SCHEMA,
                                    "minItems": 1}},
        },
        "sh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eta": {"type": "number", "exclusiveMinimum": 1},
                "mode": {"enum": ["single_axis", "diagonal"]},
                "n_configs": {"type": "integer", "minimum": 2},
                "drive_axis": {"enum": ["layers", "data_fraction"]},
            },
        },
        "memory": {
            "type": "object",
            "additionalProperties": False,
            "required": ["budget"],
            "properties": {
                "budget": {"type": "integer", "minimum": 1},
                "per_level": {"type": "object",
                              "additionalProperties": {"type": "integer", "minimum": 1}},
            },
        },
        "budget": {
            "type": "object",
            "additionalProperties": False,
            "required": ["steps", "batch_size"],
            "properties": {
                "steps": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
            },
        },
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rank": {"type": "number", "minimum": 0},
                "wall": {"type": "number", "minimum": 0},
            },
        },
        "output_dir": {"type": "string"},
    },
}


@dataclass(frozen=True)
class RunConfig:
    raw: dict[str, Any]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid run config: {exc.message}") from exc
        return cls(raw=data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def task(self) -> Task:
        t = self.raw["task"]
        return make_task(
            t["name"], t["generator_seed"], t["n_train"], t["n_val"],
            input_dim=t.get("input_dim", 2), target_dim=t.get("target_dim", 2),
            objective=t.get("objective"), noise=t.get("noise", 0.05),
        )

    def arch(self) -> list[LayerSpec]:
        a = self.raw["architecture"]
        return dense_arch(a["dims"], activation=a.get("activation", "tanh"),
                          last_activation=a.get("last_activation", "identity"))

    def n_layers(self) -> int:
        return len(self.raw["architecture"]["dims"]) - 1

    def search_space(self) -> SearchSpace:
        return SearchSpace(self.raw["search_space"])

    def axes(self) -> list[FidelityAxis]:
        out = []
        for spec in self.raw["fidelity"]["axes"]:
            if "levels" in spec:
                out.append(FidelityAxis(spec["name"], spec["kind"],
                                        tuple(float(v) for v in spec["levels"])))
            else:
                for key in ("min", "max", "count"):
                    if key not in spec:
                        raise ConfigError(
                            f"axis {spec['name']!r} needs either levels or min/max/count")
                out.append(discretize_axis(spec["name"], spec["kind"], spec["min"],
                                           spec["max"], spec["count"],
                                           spec.get("pattern", "geometric")))
        return out

    def axis(self, name: str) -> FidelityAxis:
        for ax in self.axes():
            if ax.name == name:
                return ax
        raise ConfigError(f"no {name!r} axis in config")

    def budget(self, sample_fraction: float = 1.0) -> TrainBudget:
        b = self.raw["budget"]
        return TrainBudget(steps=b["steps"], batch_size=b["batch_size"],
                           sample_fraction=sample_fraction)

    def seeds(self) -> list[int]:
        return [int(s) for s in self.raw["seeds"]]

    def sh_config(self, mode: str | None = None, eta: float | None = None,
                  n_configs: int | None = None) -> SHConfig:
        sh = self.raw.get("sh", {})
        return SHConfig(
            eta=eta if eta is not None else sh.get("eta", 2.0),
            n_configs=n_configs if n_configs is not None else sh.get(
                "n_configs", self.search_space().size()),
            mode=mode if mode is not None else sh.get("mode", "diagonal"),
            axes=tuple(self.axes()),
            seed=self.seeds()[0],
            drive_axis=sh.get("drive_axis"),
        )

    def memory_model(self) -> MemoryModel | None:
        mem = self.raw.get("memory")
        if mem is None:
            return None
        per_level = mem.get("per_level")
        if per_level is None:
            # derive job memory from the cost model, scaled to abstract units
            from ..freezer import estimate_cost, plan_for_network
            from ..microtrainer.network import Network

            net = Network(self.arch(), init_seed=0)
            axis = self.axis("layers")
            b = self.raw["budget"]["batch_size"]
            levels = {}
            for z in axis.levels:
                est = estimate_cost(plan_for_network(net, int(z)), net.layers, b)
                levels[z] = est.peak_bytes
            return MemoryModel(per_level=levels, budget=mem["budget"])
        return MemoryModel(
            per_level={float(k): int(v) for k, v in per_level.items()},
            budget=mem["budget"])

    def rank_tolerance(self) -> float:
        return self.raw.get("tolerances", {}).get("rank", 0.05)

    def wall_tolerance(self) -> float:
        return self.raw.get("tolerances", {}).get("wall", 0.05)
