"""In-process evaluation backend over the micro trainer."""

from __future__ import annotations

import dataclasses
from typing import Any, Mapping

import numpy as np

from ..fidelity import HyperparamConfig
from ..freezer import plan_for_network
from ..microtrainer import engine
from ..microtrainer.network import Network
from ..records import EvalRecord
from .config import RunConfig

MICRO_AXES = ("layers", "data_fraction")


def derive_seeds(sweep_seed: int, config_id: int) -> tuple[int, int]:
    """(init_seed, data_seed): per (config, seed), identical across fidelities."""
    ss = np.random.SeedSequence(entropy=int(sweep_seed), spawn_key=(int(config_id),))
    a, b = ss.generate_state(2)
    return int(a), int(b)


def micro_backend(cfg: RunConfig):
    """Backend callable (config, fidelity, seed) -> EvalRecord.

    Safe for concurrent calls with distinct triples: the dataset is generated
    once up front and only read afterwards.
    """
    task = cfg.task()
    task.data()  # materialize before any parallel use
    arch = cfg.arch()
    n_layers = len([s for s in arch if s.has_params])

    def backend(config: HyperparamConfig, fidelity: Mapping[str, float],
                seed: int) -> EvalRecord:
        z = int(fidelity.get("layers", n_layers))
        frac = float(fidelity.get("data_fraction", 1.0))
        init_seed, data_seed = derive_seeds(seed, config.id)
        net = Network(arch, init_seed)
        plan = plan_for_network(net, z)
        rec = engine.train(net, task, config, plan, cfg.budget(frac), data_seed)
        # records carry the sweep-level seed; the derived streams are internal
        return dataclasses.replace(rec, seed=int(seed))

    backend.axes = MICRO_AXES
    return backend


def worker_handler(cfg: RunConfig):
    """Wire-protocol handler over the micro backend."""
    backend = micro_backend(cfg)

    def handler(config_values: Mapping[str, Any], fidelity: Mapping[str, float],
                seed: int, budget: Mapping[str, Any]) -> EvalRecord:
        config = HyperparamConfig(id=int(config_values.get("id", -1)),
                                  values=config_values.get("values", config_values))
        return backend(config, fidelity, seed)

    return handler
