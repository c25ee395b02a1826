"""Fidelity axes, search spaces, and the validity checks a fidelity must pass:
costs must rise with fidelity, and rankings must agree more with the
full-fidelity reference as fidelity grows.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .records import EvalRecord

AXIS_NAMES = ("layers", "data_fraction")


class FidelityError(ValueError):
    pass


@dataclass(frozen=True)
class FidelityAxis:
    name: str
    kind: str  # integer | rational
    levels: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.name not in AXIS_NAMES:
            raise FidelityError(f"unknown axis {self.name!r}; have {AXIS_NAMES}")
        if self.kind not in ("integer", "rational"):
            raise FidelityError(f"axis kind must be integer or rational")
        if len(self.levels) < 1:
            raise FidelityError("axis needs at least one level")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise FidelityError(f"levels must be strictly increasing: {self.levels}")
        if self.kind == "integer" and any(v != int(v) for v in self.levels):
            raise FidelityError("integer axis has non-integer levels")

    @property
    def min(self) -> float:
        return self.levels[0]

    @property
    def max(self) -> float:
        return self.levels[-1]

    def contains(self, value: float) -> bool:
        return any(value == lv for lv in self.levels)


def discretize_axis(name: str, kind: str, lo: float, hi: float, count: int,
                    pattern: str = "geometric") -> FidelityAxis:
    """Discretize [lo, hi] into ``count`` levels, endpoints always included.

    Geometric spacing multiplies by a constant ratio; integer axes round and
    deduplicate (the returned level count may shrink).
    """
    if count < 2:
        raise FidelityError("count must be >= 2")
    if lo >= hi:
        raise FidelityError("min must be below max")
    if pattern == "geometric":
        if lo <= 0:
            raise FidelityError("geometric spacing requires min > 0")
        raw = [lo * (hi / lo) ** (i / (count - 1)) for i in range(count)]
    elif pattern == "uniform":
        raw = [lo + (hi - lo) * i / (count - 1) for i in range(count)]
    else:
        raise FidelityError(f"unknown pattern {pattern!r}")
    # snap float noise (e.g. 0.4999999999999999 from exponentials) so levels
    # round-trip through JSON and compare exactly
    raw = [float(round(v, 12)) for v in raw]
    raw[0], raw[-1] = lo, hi

    if kind == "integer":
        available = int(hi) - int(lo) + 1
        if count > available:
            raise FidelityError(
                f"count={count} exceeds the {available} distinct integers in "
                f"[{int(lo)}, {int(hi)}]")
        levels = []
        for v in raw:
            iv = float(int(round(v)))
            if not levels or iv > levels[-1]:
                levels.append(iv)
    else:
        levels = []
        for v in raw:
            if not levels or v > levels[-1]:
                levels.append(v)
    return FidelityAxis(name=name, kind=kind, levels=tuple(levels))


def layers_axis(n_layers: int, count: int | None = None,
                pattern: str = "geometric") -> FidelityAxis:
    if count is None:
        return FidelityAxis("layers", "integer",
                            tuple(float(z) for z in range(1, n_layers + 1)))
    return discretize_axis("layers", "integer", 1, n_layers, count, pattern)


@dataclass(frozen=True)
class FidelityPoint:
    values: tuple[tuple[str, float], ...]

    @classmethod
    def of(cls, **kwargs: float) -> "FidelityPoint":
        return cls(tuple(sorted(kwargs.items())))

    def __getitem__(self, axis: str) -> float:
        for k, v in self.values:
            if k == axis:
                return v
        raise KeyError(axis)

    def get(self, axis: str, default: float | None = None) -> float | None:
        for k, v in self.values:
            if k == axis:
                return v
        return default

    def as_dict(self) -> dict[str, float]:
        return dict(self.values)

    def validate(self, axes: Sequence[FidelityAxis]) -> None:
        by_name = {a.name: a for a in axes}
        for k, v in self.values:
            axis = by_name.get(k)
            if axis is None:
                raise FidelityError(f"point uses axis {k!r} with no definition")
            if not axis.contains(v):
                raise FidelityError(
                    f"{k}={v} is not one of the axis levels {axis.levels}")


# -- hyperparameter search spaces ---------------------------------------------

@dataclass(frozen=True)
class HyperparamConfig:
    id: int
    values: Mapping[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "values": dict(self.values)}

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "HyperparamConfig":
        return cls(id=int(d["id"]), values=dict(d["values"]))


class SearchSpace:
    """Named dimensions with finite value lists; the grid enumerates them."""

    def __init__(self, dimensions: Mapping[str, Sequence[Any]]):
        if not dimensions:
            raise FidelityError("search space needs at least one dimension")
        for name, vals in dimensions.items():
            if not vals:
                raise FidelityError(f"dimension {name!r} has no values")
        self.dimensions = {k: list(v) for k, v in dimensions.items()}

    def size(self) -> int:
        return math.prod(len(v) for v in self.dimensions.values())

    def grid(self) -> list[HyperparamConfig]:
        names = list(self.dimensions)
        combos = itertools.product(*(self.dimensions[n] for n in names))
        return [HyperparamConfig(id=i, values=dict(zip(names, combo)))
                for i, combo in enumerate(combos)]

    def config_by_id(self, config_id: int) -> HyperparamConfig:
        grid = self.grid()
        if not 0 <= config_id < len(grid):
            raise FidelityError(f"config id {config_id} outside grid of {len(grid)}")
        return grid[config_id]


# -- validity checks -----------------------------------------------------------

@dataclass(frozen=True)
class MonotonicityReport:
    axis: str
    per_config: dict[int, bool]
    tolerance_wall: float

    @property
    def pass_fraction(self) -> float:
        if not self.per_config:
            return 0.0
        return sum(self.per_config.values()) / len(self.per_config)

    @property
    def all_pass(self) -> bool:
        return bool(self.per_config) and all(self.per_config.values())


def check_cost_monotonicity(records: Iterable[EvalRecord], axis: str = "layers",
                            wall_tolerance: float = 0.05,
                            check_wall: bool = False) -> MonotonicityReport:
    """Costs must strictly increase along ``axis`` for every config.

    FLOPs and peak bytes are compared exactly; wall time (optional) within a
    relative tolerance. Records must be comparable: same batch size, the
    other fidelity axes pinned.
    """
    groups: dict[int, list[EvalRecord]] = {}
    for rec in records:
        groups.setdefault(rec.config_id, []).append(rec)
    if not groups:
        raise FidelityError("no records given")

    per_config: dict[int, bool] = {}
    for cid, recs in groups.items():
        batch_sizes = {r.cost.batch_size for r in recs}
        if len(batch_sizes) > 1:
            raise FidelityError(
                f"config {cid}: records mix batch sizes {sorted(batch_sizes)}")
        others = {tuple(sorted((k, v) for k, v in r.fidelity.items() if k != axis))
                  for r in recs}
        if len(others) > 1:
            raise FidelityError(
                f"config {cid}: fidelity axes other than {axis!r} are not fixed")
        recs = sorted(recs, key=lambda r: r.fidelity[axis])
        if len(recs) < 2:
            raise FidelityError(
                f"config {cid}: needs >= 2 fidelities on axis {axis!r}")
        ok = True
        for lo, hi in zip(recs, recs[1:]):
            if not (lo.cost.flops < hi.cost.flops):
                ok = False
            if not (lo.cost.peak_bytes < hi.cost.peak_bytes):
                ok = False
            if check_wall and not (lo.cost.wall_ms < hi.cost.wall_ms * (1 + wall_tolerance)):
                ok = False
        per_config[cid] = ok
    return MonotonicityReport(axis=axis, per_config=per_config,
                              tolerance_wall=wall_tolerance)


@dataclass(frozen=True)
class RankReport:
    """Per-level rank agreement against the full-fidelity reference."""

    levels: tuple[float, ...]
    rho: tuple[float, ...]
    disagreement: tuple[float, ...]  # discordant-pair fraction per level
    tolerance: float
    monotone: bool
    n_configs: int
    n_seeds: int = 0


def check_rank_monotonicity(rhos: Sequence[float], tolerance: float = 0.05) -> bool:
    """True iff the curve never drops by more than ``tolerance``."""
    if len(rhos) < 2:
        raise FidelityError("need rank correlations at >= 2 levels")
    return all(b >= a - tolerance for a, b in zip(rhos, rhos[1:]))


def pairwise_disagreement(objs: Sequence[float], ref: Sequence[float]) -> float:
    """Fraction of config pairs ordered differently than at the reference."""
    if len(objs) != len(ref):
        raise FidelityError("length mismatch")
    n = len(objs)
    if n < 2:
        raise FidelityError("need at least 2 configs")
    discordant = 0
    total = n * (n - 1) // 2
    for i in range(n):
        for j in range(i + 1, n):
            a = objs[i] - objs[j]
            b = ref[i] - ref[j]
            if a * b < 0:
                discordant += 1
    return discordant / total


def rank_monotonicity_report(objectives_by_level: Mapping[float, Sequence[float]],
                             tolerance: float = 0.05,
                             n_seeds: int = 0) -> RankReport:
    """Spearman rho and disagreement rate per level vs the highest level.

    ``objectives_by_level`` maps a fidelity level to the per-config objective
    vector (same config order at every level).
    """
    from .analysis import spearman

    levels = tuple(sorted(objectives_by_level))
    if len(levels) < 2:
        raise FidelityError("need >= 2 fidelity levels")
    ref = list(objectives_by_level[levels[-1]])
    rhos = []
    deltas = []
    for lv in levels:
        objs = list(objectives_by_level[lv])
        if len(objs) != len(ref):
            raise FidelityError(f"level {lv} has {len(objs)} configs, reference has {len(ref)}")
        rhos.append(spearman(objs, ref))
        deltas.append(pairwise_disagreement(objs, ref))
    return RankReport(
        levels=levels,
        rho=tuple(rhos),
        disagreement=tuple(deltas),
        tolerance=tolerance,
        monotone=check_rank_monotonicity(rhos, tolerance),
        n_configs=len(ref),
        n_seeds=n_seeds,
    )
