"""Successive Halving over single and joint fidelity spaces, plus the
memory-budgeted wave planner that packs low-memory jobs side by side.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .fidelity import FidelityAxis, HyperparamConfig
from .records import DIVERGED_OBJECTIVE, CostRecord, EvalRecord


class ScheduleError(ValueError):
    pass


Backend = Callable[[HyperparamConfig, dict[str, float], int], EvalRecord]


@dataclass(frozen=True)
class SHConfig:
    eta: float
    n_configs: int
    mode: str  # single_axis | diagonal
    axes: tuple[FidelityAxis, ...]
    seed: int = 0
    drive_axis: str | None = None  # single_axis: which axis advances

    def __post_init__(self) -> None:
        if self.eta <= 1:
            raise ScheduleError("eta must be > 1")
        if self.mode not in ("single_axis", "diagonal"):
            raise ScheduleError(f"unknown mode {self.mode!r}")
        if not self.axes:
            raise ScheduleError("need at least one fidelity axis")
        if self.n_configs < self.eta:
            raise ScheduleError("n_configs must be >= eta")


def rung_sizes(n_configs: int, eta: float, rungs: int) -> list[int]:
    sizes = [n_configs]
    for _ in range(rungs - 1):
        sizes.append(max(1, int(math.floor(sizes[-1] / eta))))
    return sizes


@dataclass
class Rung:
    level: int
    fidelity: dict[str, float]
    size: int
    survivors: list[int] = field(default_factory=list)
    results: list[EvalRecord] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {"level": self.level, "fidelity": dict(self.fidelity),
                "size": self.size, "survivors": list(self.survivors)}


def sh_schedule(cfg: SHConfig) -> list[Rung]:
    """Rung skeletons: fidelity per level plus the eta-shrunk sizes.

    Diagonal mode advances every axis together, so all axes must be
    discretized to the same number of rungs; single-axis mode moves one axis
    and pins the rest at their maximum.
    """
    if cfg.mode == "diagonal":
        counts = {len(a.levels) for a in cfg.axes}
        if len(counts) != 1:
            raise ScheduleError(
                f"diagonal mode needs equal rung counts per axis, got "
                f"{[(a.name, len(a.levels)) for a in cfg.axes]}")
        rungs_n = counts.pop()
        fidelities = [
            {a.name: a.levels[r] for a in cfg.axes} for r in range(rungs_n)
        ]
    else:
        drive = cfg.drive_axis
        if drive is None:
            names = [a.name for a in cfg.axes]
            drive = "data_fraction" if "data_fraction" in names else names[0]
        by_name = {a.name: a for a in cfg.axes}
        if drive not in by_name:
            raise ScheduleError(f"drive axis {drive!r} not among axes")
        axis = by_name[drive]
        rungs_n = len(axis.levels)
        fidelities = []
        for r in range(rungs_n):
            fid = {a.name: a.max for a in cfg.axes}
            fid[drive] = axis.levels[r]
            fidelities.append(fid)

    sizes = rung_sizes(cfg.n_configs, cfg.eta, rungs_n)
    return [Rung(level=r, fidelity=fidelities[r], size=sizes[r])
            for r in range(rungs_n)]


def promote(results: Sequence[EvalRecord], target: int) -> list[int]:
    """Best ``target`` config ids; diverged runs are never promoted."""
    ranked = sorted(results, key=lambda r: r.sort_key())
    return [r.config_id for r in ranked[:target] if not r.diverged]


@dataclass
class SHTrace:
    rungs: list[Rung]
    winner: HyperparamConfig | None

    def cumulative_flops(self) -> list[int]:
        out, total = [], 0
        for rung in self.rungs:
            total += sum(r.cost.flops for r in rung.results)
            out.append(total)
        return out

    def cumulative_wall_ms(self) -> list[float]:
        out, total = [], 0.0
        for rung in self.rungs:
            total += sum(r.cost.wall_ms for r in rung.results)
            out.append(total)
        return out

    def all_records(self) -> list[EvalRecord]:
        return [r for rung in self.rungs for r in rung.results]


def _diverged_record(config: HyperparamConfig, fidelity: dict[str, float],
                     seed: int, message: str) -> EvalRecord:
    return EvalRecord(
        config_id=config.id, fidelity=dict(fidelity), seed=seed,
        objective=DIVERGED_OBJECTIVE,
        cost=CostRecord(flops=0, peak_bytes=0, wall_ms=0.0),
        diverged=True, meta={"error": message})


def _evaluate(backend: Backend, config: HyperparamConfig,
              fidelity: dict[str, float], seed: int) -> EvalRecord:
    try:
        return backend(config, dict(fidelity), seed)
    except Exception as exc:  # backend failure maps to the diverged sentinel
        return _diverged_record(config, fidelity, seed, str(exc))


@dataclass(frozen=True)
class MemoryModel:
    """Per-fidelity job memory m(z) in abstract units plus the budget."""

    per_level: Mapping[float, int]
    budget: int

    def __post_init__(self) -> None:
        levels = sorted(self.per_level)
        mems = [self.per_level[z] for z in levels]
        if any(b <= a for a, b in zip(mems, mems[1:])):
            raise ScheduleError("job memory must be strictly increasing in z")
        if any(m <= 0 for m in mems):
            raise ScheduleError("job memory must be positive")
        if self.budget < mems[-1]:
            raise ScheduleError(
                f"budget {self.budget} below the top-fidelity job memory {mems[-1]}")

    def mem(self, z: float) -> int:
        if z not in self.per_level:
            raise ScheduleError(f"no memory figure for fidelity level {z}")
        return self.per_level[z]


@dataclass(frozen=True)
class ExecutionWave:
    index: int
    jobs: tuple[tuple[int, tuple[tuple[str, float], ...]], ...]  # (config id, fidelity items)
    memory_used: int

    def to_json(self) -> dict[str, Any]:
        return {"index": self.index, "memory_used": self.memory_used,
                "jobs": [{"config_id": c, "fidelity": dict(f)} for c, f in self.jobs]}


def plan_memory_parallel(config_ids: Sequence[int], fidelity: Mapping[str, float],
                         mem_model: MemoryModel) -> list[ExecutionWave]:
    """First-fit packing of one rung's jobs into memory-budget waves."""
    z = fidelity["layers"]
    need = mem_model.mem(z)
    if need > mem_model.budget:
        raise ScheduleError(
            f"fidelity does not fit memory budget: m({z:g})={need} > "
            f"{mem_model.budget} (minimum budget {need})")
    fid_items = tuple(sorted(fidelity.items()))
    waves: list[list[int]] = []
    used: list[int] = []
    for cid in config_ids:
        placed = False
        for w, load in enumerate(used):
            if load + need <= mem_model.budget:
                waves[w].append(cid)
                used[w] += need
                placed = True
                break
        if not placed:
            waves.append([cid])
            used.append(need)
    return [
        ExecutionWave(index=i, jobs=tuple((c, fid_items) for c in wave),
                      memory_used=used[i])
        for i, wave in enumerate(waves)
    ]


def plan_sequential(config_ids: Sequence[int],
                    fidelity: Mapping[str, float]) -> list[ExecutionWave]:
    """One job per wave: the no-parallelism baseline."""
    fid_items = tuple(sorted(fidelity.items()))
    return [ExecutionWave(index=i, jobs=((cid, fid_items),), memory_used=0)
            for i, cid in enumerate(config_ids)]


def simulate_makespan(waves: Sequence[ExecutionWave],
                      time_model: Mapping[float, float]) -> float:
    """Total time when jobs inside a wave run concurrently."""
    total = 0.0
    for wave in waves:
        if not wave.jobs:
            continue
        total += max(time_model[dict(f)["layers"]] for _, f in wave.jobs)
    return total


def run_sh(schedule: Sequence[Rung], configs: Sequence[HyperparamConfig],
           backend: Backend, eta: float = 2.0, seed: int = 0, store: Any = None,
           mem_model: MemoryModel | None = None,
           max_workers: int = 1) -> SHTrace:
    """Execute a schedule: evaluate, promote the best 1/eta, repeat.

    Each rung is a synchronization barrier. Promotion sorts by objective with
    ties broken by lower config id; diverged evaluations are never promoted.
    The trace content is independent of intra-wave completion order.
    """
    by_id = {c.id: c for c in configs}
    if len(by_id) != len(configs):
        raise ScheduleError("config ids must be unique")
    alive = [c.id for c in sorted(configs, key=lambda c: c.id)]

    rungs_out: list[Rung] = []
    for rung_spec in schedule:
        rung = Rung(level=rung_spec.level, fidelity=dict(rung_spec.fidelity),
                    size=rung_spec.size)
        participants = alive[:rung.size] if len(alive) > rung.size else alive
        if mem_model is not None:
            waves = plan_memory_parallel(participants, rung.fidelity, mem_model)
        else:
            waves = [ExecutionWave(index=0,
                                   jobs=tuple((cid, tuple(sorted(rung.fidelity.items())))
                                              for cid in participants),
                                   memory_used=0)]
        results: dict[int, EvalRecord] = {}
        for wave in waves:
            if max_workers > 1 and len(wave.jobs) > 1:
                with ThreadPoolExecutor(max_workers=max_workers) as pool:
                    futures = {
                        cid: pool.submit(_evaluate, backend, by_id[cid],
                                         rung.fidelity, seed)
                        for cid, _ in wave.jobs
                    }
                    for cid, fut in futures.items():
                        results[cid] = fut.result()
            else:
                for cid, _ in wave.jobs:
                    results[cid] = _evaluate(backend, by_id[cid], rung.fidelity, seed)
            if store is not None:
                store.append("wave", {"rung": rung.level, **wave.to_json()})
        # deterministic trace order regardless of completion order
        rung.results = [results[cid] for cid in sorted(results)]
        if store is not None:
            for rec in rung.results:
                store.append("eval", rec.to_json())

        next_size = max(1, int(math.floor(len(participants) / eta)))
        rung.survivors = promote(rung.results, next_size)
        if store is not None:
            store.append("rung", rung.to_json())
        rungs_out.append(rung)
        alive = rung.survivors
        if not alive:
            break

    winner = None
    if rungs_out and rungs_out[-1].survivors:
        winner = by_id[rungs_out[-1].survivors[0]]
    return SHTrace(rungs=rungs_out, winner=winner)
