"""Micro trainer: dense nets with manual backprop and prefix freezing.

Two interchangeable step backends exist: a compiled kernel (built from
``_fastloop.pyx``) and a pure-numpy fallback. Selection happens here at
import; set ``FROSTHPO_BACKEND=numpy`` or ``=compiled`` to force one.
"""

from __future__ import annotations

import os

from . import backend_numpy

try:
    from . import backend_fast
    _COMPILED = backend_fast
except ImportError:
    _COMPILED = None


def available_backends() -> dict[str, object]:
    out = {"numpy": backend_numpy}
    if _COMPILED is not None:
        out["compiled"] = _COMPILED
    return out


def active_backend():
    forced = os.environ.get("FROSTHPO_BACKEND", "").strip().lower()
    if forced in ("numpy", "python"):
        return backend_numpy
    if forced in ("compiled", "fast", "cython"):
        if _COMPILED is None:
            raise RuntimeError(
                "FROSTHPO_BACKEND requests the compiled kernel but it is not built")
        return _COMPILED
    if forced:
        raise RuntimeError(f"unknown FROSTHPO_BACKEND value {forced!r}")
    return _COMPILED if _COMPILED is not None else backend_numpy


def backend_name() -> str:
    return active_backend().NAME


from .network import (ACT_CODES, ArchitectureError, LayerSpec, Network,  # noqa: E402
                      dense_arch, init_network)
from .tasks import Task, TrainBudget, make_task  # noqa: E402
from .engine import (BackwardResult, ForwardCache, UsageError, backward,  # noqa: E402
                     finite_diff_gradcheck, forward_batch, train)

__all__ = [
    "ACT_CODES", "ArchitectureError", "LayerSpec", "Network", "dense_arch",
    "init_network", "Task", "TrainBudget", "make_task", "BackwardResult",
    "ForwardCache", "UsageError", "backward", "finite_diff_gradcheck",
    "forward_batch", "train", "available_backends", "active_backend",
    "backend_name",
]
