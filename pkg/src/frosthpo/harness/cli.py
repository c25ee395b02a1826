"""Command-line interface.

Exit codes: 0 success, 1 validation failure, 2 configuration error.
Diagnostics go to standard error; results to the store and standard output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .. import analysis
from ..fidelity import (FidelityError, check_cost_monotonicity,
                        rank_monotonicity_report)
from ..freezer import estimate_cost, measure_step, plan_for_network
from ..microtrainer import backend_name
from ..microtrainer.network import Network
from ..records import EvalRecord
from ..scheduler import ScheduleError, run_sh, sh_schedule
from .backends import micro_backend, worker_handler, MICRO_AXES
from .config import ConfigError, RunConfig
from .protocol import WireClient, serve, wire_backend
from .replay import ReplayError, replay_trace
from .store import ResultStore, StoreError, eval_key, read_store

CONFIG_ERRORS = (ConfigError, ScheduleError, FidelityError, StoreError,
                 analysis.AnalysisError)


def _default_out(command: str) -> Path:
    base = os.environ.get("FROSTHPO_OUTPUT", "frosthpo-out")
    return Path(base) / command


def _store_dir(args, command: str) -> Path:
    return Path(args.store) if args.store else _default_out(command)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- sweep ----------------------------------------------------------------------

def sweep_plan(cfg: RunConfig):
    """Deterministic evaluation order: config x layers x data x seed."""
    layers = cfg.axis("layers").levels
    try:
        data = cfg.axis("data_fraction").levels
    except ConfigError:
        data = (1.0,)
    plan = []
    for config in cfg.search_space().grid():
        for z in layers:
            for frac in data:
                for seed in cfg.seeds():
                    plan.append((config, {"layers": z, "data_fraction": frac}, seed))
    return plan


def cmd_sweep(args) -> int:
    cfg = RunConfig.load(args.config)
    out = _store_dir(args, "sweep")
    store = ResultStore(out, resume=args.resume or (out / ResultStore.FILENAME).exists())
    done = store.completed_evals()
    backend = micro_backend(cfg)
    plan = sweep_plan(cfg)
    _log(f"sweep: {len(plan)} evaluations planned, {len(done)} already stored "
         f"(backend: {backend_name()})")
    appended = 0
    for config, fidelity, seed in plan:
        key = (config.id, tuple(sorted(fidelity.items())), seed)
        if key in done:
            continue
        rec = backend(config, fidelity, seed)
        store.append("eval", rec.to_json())
        appended += 1
        if args.halt_after and appended >= args.halt_after:
            _log(f"sweep: halting after {appended} new evaluations as requested")
            break
    store.close()
    _log(f"sweep: appended {appended} records to {store.path}")
    return 0


# -- sh -------------------------------------------------------------------------

def cmd_sh(args) -> int:
    cfg = RunConfig.load(args.config)
    sh_cfg = cfg.sh_config(mode=args.mode, eta=args.eta, n_configs=args.n_configs)
    schedule = sh_schedule(sh_cfg)
    configs = cfg.search_space().grid()[: sh_cfg.n_configs]
    out = _store_dir(args, f"sh-{sh_cfg.mode}")
    store = ResultStore(out, resume=(out / ResultStore.FILENAME).exists())

    if args.worker_cmd:
        budget = cfg.raw["budget"]
        client = WireClient(args.worker_cmd.split())
        backend = wire_backend(client, budget)
    else:
        client = None
        backend = micro_backend(cfg)

    mem_model = cfg.memory_model() if args.memory else None
    try:
        trace = run_sh(schedule, configs, backend, eta=sh_cfg.eta,
                       seed=sh_cfg.seed, store=store, mem_model=mem_model,
                       max_workers=args.workers)
    finally:
        if client is not None:
            client.close()
        store.close()

    result = {
        "mode": sh_cfg.mode,
        "winner": trace.winner.to_json() if trace.winner else None,
        "rung_sizes": [len(r.results) for r in trace.rungs],
        "cumulative_flops": trace.cumulative_flops(),
        "store": str(store.path),
    }
    print(json.dumps(result, indent=2))
    return 0


# -- validate-fidelity ------------------------------------------------------------

def cmd_validate(args) -> int:
    cfg = RunConfig.load(args.config)
    out = _store_dir(args, "sweep")
    if not (out / ResultStore.FILENAME).exists() or args.resume:
        sweep_args = argparse.Namespace(config=args.config, store=str(out),
                                        resume=True, halt_after=0)
        cmd_sweep(sweep_args)

    records = [EvalRecord.from_json(r["payload"])
               for r in read_store(out) if r["kind"] == "eval"]
    if not records:
        raise ConfigError(f"no evaluation records under {out}")
    data_max = max(r.fidelity.get("data_fraction", 1.0) for r in records)
    layer_recs = [r for r in records
                  if r.fidelity.get("data_fraction", 1.0) == data_max]

    cost_report = check_cost_monotonicity(layer_recs, axis="layers",
                                          wall_tolerance=cfg.wall_tolerance())

    # measured-vs-estimated flops, one probe per fidelity level
    arch = cfg.arch()
    net = Network(arch, init_seed=cfg.seeds()[0])
    task = cfg.task()
    x_train, y_train, _, _ = task.data()
    b = cfg.raw["budget"]["batch_size"]
    batch = (x_train[:b], y_train[:b])
    flops_ok = True
    for z in cfg.axis("layers").levels:
        plan = plan_for_network(net, int(z))
        measured = measure_step(net, plan, batch, warmup=2, reps=3,
                                objective=task.objective)
        estimated = estimate_cost(plan, arch, b).flops_per_step
        if measured.measured_flops != estimated:
            flops_ok = False
            _log(f"validate: z={z:g} measured flops {measured.measured_flops} "
                 f"!= estimate {estimated}")

    by_level: dict[float, list[float]] = {}
    config_ids = sorted({r.config_id for r in layer_recs})
    seeds = sorted({r.seed for r in layer_recs})
    for z in cfg.axis("layers").levels:
        cell = [r for r in layer_recs if r.fidelity["layers"] == z]
        means = []
        for cid in config_ids:
            vals = [r.objective for r in cell if r.config_id == cid]
            if not vals:
                raise ConfigError(f"sweep incomplete: config {cid} missing at z={z:g}")
            means.append(sum(vals) / len(vals))
        by_level[z] = analysis.sentinelize(means, config_ids)
    rank_report = rank_monotonicity_report(by_level, tolerance=cfg.rank_tolerance(),
                                           n_seeds=len(seeds))

    verdict = cost_report.all_pass and flops_ok and rank_report.monotone
    report = {
        "cost_monotonicity": {"pass_fraction": cost_report.pass_fraction,
                              "all_pass": cost_report.all_pass},
        "measured_equals_estimated_flops": flops_ok,
        "rank": {
            "levels": list(rank_report.levels),
            "rho": list(rank_report.rho),
            "disagreement": list(rank_report.disagreement),
            "monotone": rank_report.monotone,
            "tolerance": rank_report.tolerance,
            "n_configs": rank_report.n_configs,
            "n_seeds": rank_report.n_seeds,
        },
        "verdict": "pass" if verdict else "fail",
    }
    (out / "validation.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report, indent=2, sort_keys=True))
    if not verdict:
        _log("validate-fidelity: FAILED")
        return 1
    _log("validate-fidelity: all checks passed")
    return 0


# -- measure ----------------------------------------------------------------------

def cmd_measure(args) -> int:
    cfg = RunConfig.load(args.config)
    arch = cfg.arch()
    net = Network(arch, init_seed=cfg.seeds()[0])
    task = cfg.task()
    x_train, y_train, _, _ = task.data()
    b = cfg.raw["budget"]["batch_size"]
    batch = (x_train[:b], y_train[:b])
    out = _store_dir(args, "measure")
    store = ResultStore(out, resume=(out / ResultStore.FILENAME).exists())
    print(f"{'z':>4} {'wall_ms/step':>14} {'flops/step':>12} {'est_flops':>12} "
          f"{'peak_bytes':>12}")
    rc = 0
    for z in cfg.axis("layers").levels:
        plan = plan_for_network(net, int(z))
        m = measure_step(net, plan, batch, warmup=args.warmup, reps=args.reps,
                         objective=task.objective)
        est = estimate_cost(plan, arch, b).flops_per_step
        marker = "" if m.measured_flops == est else "  MISMATCH"
        print(f"{int(z):>4} {m.mean_step_wall_time_ms:>14.4f} "
              f"{m.measured_flops:>12} {est:>12} {m.peak_tracked_bytes:>12}{marker}")
        if m.measured_flops != est:
            rc = 1
        store.append("measure", {
            "z": z, "wall_ms": m.mean_step_wall_time_ms,
            "flops": m.measured_flops, "estimated_flops": est,
            "peak_tracked_bytes": m.peak_tracked_bytes,
            "warmup_passes": m.warmup_passes, "measured_passes": m.measured_passes,
        })
    store.close()
    return rc


# -- report -----------------------------------------------------------------------

def cmd_report(args) -> int:
    cfg = RunConfig.load(args.config)
    configs = cfg.search_space().grid()
    landscapes = {}
    if args.sweep:
        records = [EvalRecord.from_json(r["payload"])
                   for r in read_store(args.sweep) if r["kind"] == "eval"]
        landscapes["joint"] = analysis.rank_landscape(records)
    traces = {}
    for spec in args.trace or []:
        if "=" not in spec:
            raise ConfigError(f"--trace expects name=DIR, got {spec!r}")
        name, path = spec.split("=", 1)
        traces[name] = replay_trace(read_store(path), configs)
    outdir = Path(args.out) if args.out else _default_out("report")
    written = analysis.export_report(outdir, traces=traces, landscapes=landscapes)
    thresholds = {}
    if "joint" in landscapes:
        masks = analysis.threshold_map(landscapes["joint"], [0.6, 0.85, 0.95])
        thresholds = {str(t): mask.tolist() for t, mask in masks.items()}
        (outdir / "threshold_maps.json").write_text(
            json.dumps(thresholds, indent=2, sort_keys=True))
        written.append(outdir / "threshold_maps.json")
    for path in written:
        print(path)
    return 0


# -- worker -----------------------------------------------------------------------

def cmd_worker(args) -> int:
    cfg = RunConfig.load(args.config)
    handler = worker_handler(cfg)
    serve(handler, MICRO_AXES, backend=f"micro/{backend_name()}",
          stdin=sys.stdin, stdout=sys.stdout)
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frosthpo",
                                description="layer-freezing multi-fidelity HPO engine")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sweep", help="evaluate the full config x fidelity grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--store", help="store directory (resumable)")
    sp.add_argument("--resume", action="store_true")
    sp.add_argument("--halt-after", type=int, default=0,
                    help="stop after N new evaluations (testing aid)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("sh", help="run a successive-halving schedule")
    sp.add_argument("--config", required=True)
    sp.add_argument("--store")
    sp.add_argument("--mode", choices=["single_axis", "diagonal"])
    sp.add_argument("--eta", type=float)
    sp.add_argument("--n-configs", type=int, dest="n_configs")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--memory", action="store_true",
                    help="plan waves against the configured memory model")
    sp.add_argument("--worker-cmd",
                    help="evaluate via an external wire-protocol worker")
    sp.set_defaults(func=cmd_sh)

    sp = sub.add_parser("validate-fidelity",
                        help="check cost and rank monotonicity on the micro benchmark")
    sp.add_argument("--config", required=True)
    sp.add_argument("--store")
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("measure", help="profile per-step cost at every fidelity")
    sp.add_argument("--config", required=True)
    sp.add_argument("--store")
    sp.add_argument("--warmup", type=int, default=100)
    sp.add_argument("--reps", type=int, default=100)
    sp.set_defaults(func=cmd_measure)

    sp = sub.add_parser("report", help="export CSV/SVG/JSON reports")
    sp.add_argument("--config", required=True)
    sp.add_argument("--sweep", help="sweep store directory for the landscape")
    sp.add_argument("--trace", action="append",
                    help="name=DIR of a schedule store (repeatable)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("worker", help="serve the wire protocol on stdio")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_worker)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        _log(f"error: {exc}")
        return 2
    except ReplayError as exc:
        _log(f"replay mismatch: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
