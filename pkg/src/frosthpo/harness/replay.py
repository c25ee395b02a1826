"""Reconstruct schedules and traces from a stored record stream."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

from ..fidelity import HyperparamConfig
from ..records import EvalRecord
from ..scheduler import promote


class ReplayError(RuntimeError):
    pass


@dataclass
class ReplayRung:
    level: int
    fidelity: dict[str, float]
    size: int
    survivors: list[int]
    results: list[EvalRecord] = field(default_factory=list)


@dataclass
class ReplayTrace:
    rungs: list[ReplayRung]
    winner: HyperparamConfig | None


def replay_trace(records: Sequence[dict[str, Any]],
                 configs: Sequence[HyperparamConfig] | None = None,
                 verify: bool = True) -> ReplayTrace:
    """Rebuild the rung/eval structure a run appended to its store.

    With ``verify``, survivor sets are recomputed from the evaluation records
    and must match what the run recorded.
    """
    rungs: list[ReplayRung] = []
    pending: list[EvalRecord] = []
    for rec in records:
        if rec["kind"] == "eval":
            pending.append(EvalRecord.from_json(rec["payload"]))
        elif rec["kind"] == "rung":
            p = rec["payload"]
            rung = ReplayRung(level=int(p["level"]),
                              fidelity={k: float(v) for k, v in p["fidelity"].items()},
                              size=int(p["size"]),
                              survivors=[int(s) for s in p["survivors"]],
                              results=pending)
            pending = []
            rungs.append(rung)
    if pending:
        raise ReplayError(f"{len(pending)} evaluation records after the last rung")

    if verify:
        for rung in rungs:
            recomputed = promote(rung.results, len(rung.survivors))
            if recomputed != rung.survivors:
                raise ReplayError(
                    f"rung {rung.level}: stored survivors {rung.survivors} "
                    f"!= recomputed {recomputed}")

    winner = None
    if rungs and rungs[-1].survivors:
        wid = rungs[-1].survivors[0]
        if configs is not None:
            by_id = {c.id: c for c in configs}
            winner = by_id.get(wid)
        if winner is None:
            winner = HyperparamConfig(id=wid, values={})
    return ReplayTrace(rungs=rungs, winner=winner)
