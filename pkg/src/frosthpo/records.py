"""Evaluation records shared by the trainer, scheduler, and analysis layers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

DIVERGED_OBJECTIVE = float("inf")


@dataclass(frozen=True)
class CostRecord:
    """Resources consumed by one evaluation (or one measured step)."""

    flops: int
    peak_bytes: int
    wall_ms: float
    batch_size: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "flops": int(self.flops),
            "peak_bytes": int(self.peak_bytes),
            "wall_ms": float(self.wall_ms),
            "batch_size": int(self.batch_size),
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "CostRecord":
        return cls(
            flops=int(d["flops"]),
            peak_bytes=int(d["peak_bytes"]),
            wall_ms=float(d["wall_ms"]),
            batch_size=int(d.get("batch_size", 0)),
        )


@dataclass(frozen=True)
class EvalRecord:
    """Outcome of evaluating one (config, fidelity, seed) triple.

    ``objective`` is a minimizing metric (validation loss / error). A diverged
    run carries the +inf sentinel so it sorts strictly worse than any finite
    objective; ties among diverged runs are broken by ``config_id``.
    """

    config_id: int
    fidelity: dict[str, float]
    seed: int
    objective: float
    cost: CostRecord
    diverged: bool = False
    steps_run: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.diverged and not math.isfinite(self.objective):
            raise ValueError("non-finite objective requires diverged=True")
        if self.cost.flops < 0 or self.cost.peak_bytes < 0 or self.cost.wall_ms < 0:
            raise ValueError("cost fields must be non-negative")

    def sort_key(self) -> tuple[bool, float, int]:
        """Total order used for promotion: finite objectives first, ties by id."""
        return (self.diverged, self.objective, self.config_id)

    def to_json(self) -> dict[str, Any]:
        return {
            "config_id": self.config_id,
            "fidelity": dict(self.fidelity),
            "seed": self.seed,
            # +inf is not valid JSON; the diverged flag restores the sentinel.
            "objective": None if self.diverged else self.objective,
            "diverged": self.diverged,
            "cost": self.cost.to_json(),
            "steps_run": self.steps_run,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "EvalRecord":
        diverged = bool(d["diverged"])
        obj = d["objective"]
        return cls(
            config_id=int(d["config_id"]),
            fidelity={k: v for k, v in d["fidelity"].items()},
            seed=int(d["seed"]),
            objective=DIVERGED_OBJECTIVE if diverged or obj is None else float(obj),
            cost=CostRecord.from_json(d["cost"]),
            diverged=diverged,
            steps_run=int(d.get("steps_run", 0)),
            meta=d.get("meta", {}),
        )
