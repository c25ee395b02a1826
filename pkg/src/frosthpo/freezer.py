"""Layer discretization, freeze plans, and the compute/memory cost model.

A module tree is flattened into an ordered layer list by recursive traversal
(descending into sequential containers and user-requested container classes),
filtered to the layers that own parameters, and partitioned into a frozen
prefix and a trainable suffix of length z.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .microtrainer.network import LayerSpec, Network
from .microtrainer.runspec import OPT_STATE_SCALARS

SEQUENTIAL = "sequential_container"
USER_CONTAINER = "user_unwrap_container"
LEAF = "leaf"

# leaf ops treated as nonlinearities for activation-boundary grouping
ACTIVATION_OPS = frozenset({"relu", "tanh", "sigmoid", "gelu"})


class SplitError(ValueError):
    pass


@dataclass
class TreeNode:
    """One node of a module tree; traversal order is forward-pass order."""

    kind: str
    name: str
    cls: str = ""
    children: list["TreeNode"] = field(default_factory=list)
    op: str = ""
    param_count: int = 0
    shape: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in (SEQUENTIAL, USER_CONTAINER, LEAF):
            raise SplitError(f"unknown node kind {self.kind!r}")
        if self.kind == LEAF and self.children:
            raise SplitError(f"leaf {self.name!r} cannot have children")

    def subtree_params(self) -> int:
        if self.kind == LEAF:
            return self.param_count
        return sum(c.subtree_params() for c in self.children)

    def to_json(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind, "name": self.name}
        if self.cls:
            d["cls"] = self.cls
        if self.kind == LEAF:
            d["op"] = self.op
            d["param_count"] = self.param_count
            if self.shape is not None:
                d["shape"] = list(self.shape)
        else:
            d["children"] = [c.to_json() for c in self.children]
        return d

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "TreeNode":
        return cls(
            kind=d["kind"],
            name=d["name"],
            cls=d.get("cls", ""),
            children=[TreeNode.from_json(c) for c in d.get("children", [])],
            op=d.get("op", ""),
            param_count=int(d.get("param_count", 0)),
            shape=tuple(d["shape"]) if d.get("shape") else None,
        )


@dataclass(frozen=True)
class Layer:
    """One entry of a flattened (possibly consolidated) layer list."""

    layer_id: str
    param_count: int
    op: str = "dense"
    shape: tuple[int, ...] | None = None
    members: tuple[str, ...] = ()

    @property
    def member_count(self) -> int:
        return len(self.members) if self.members else 1

    @property
    def has_params(self) -> bool:
        return self.param_count > 0

    @property
    def is_activation(self) -> bool:
        return self.op in ACTIVATION_OPS


def flatten_tree(tree: TreeNode, unwrap: Iterable[str] = ()) -> list[Layer]:
    """All layers in forward order, before any parameter filtering.

    Descends into sequential containers and into user containers whose class
    is listed in ``unwrap``; every other node becomes one layer (a container
    kept whole contributes its full subtree parameter count).
    """
    unwrap_set = frozenset(unwrap)
    out: list[Layer] = []

    def visit(node: TreeNode) -> None:
        descend = node.kind == SEQUENTIAL or (
            node.kind == USER_CONTAINER and node.cls in unwrap_set)
        if descend:
            for child in node.children:
                visit(child)
        else:
            out.append(Layer(layer_id=node.name,
                             param_count=node.subtree_params(),
                             op=node.op or node.cls or node.kind,
                             shape=node.shape))

    visit(tree)
    seen: set[str] = set()
    for layer in out:
        if layer.layer_id in seen:
            raise SplitError(f"duplicate layer id {layer.layer_id!r}")
        seen.add(layer.layer_id)
    return out


def split_layers(tree: TreeNode, unwrap: Iterable[str] = ()) -> list[Layer]:
    """Flatten and keep only layers that own parameters."""
    layers = [l for l in flatten_tree(tree, unwrap) if l.has_params]
    if not layers:
        raise SplitError("no parametric layers")
    return layers


@dataclass(frozen=True)
class GroupingRules:
    mode: str  # per_activation_boundary | fixed_block_size | named_groups
    block_size: int = 0
    groups: tuple[tuple[str, tuple[str, ...]], ...] = ()


def consolidate(layers: Sequence[Layer], rules: GroupingRules) -> list[Layer]:
    """Coarsen a layer list into contiguous groups covering the original."""
    if rules.mode == "fixed_block_size":
        if rules.block_size < 1:
            raise SplitError("block_size must be >= 1")
        chunks = [list(layers[i:i + rules.block_size])
                  for i in range(0, len(layers), rules.block_size)]
    elif rules.mode == "per_activation_boundary":
        chunks = []
        cur: list[Layer] = []
        for layer in layers:
            cur.append(layer)
            if layer.is_activation:
                chunks.append(cur)
                cur = []
        if cur:
            chunks.append(cur)
    elif rules.mode == "named_groups":
        chunks = _named_chunks(layers, rules.groups)
    else:
        raise SplitError(f"unknown grouping mode {rules.mode!r}")

    out: list[Layer] = []
    for idx, chunk in enumerate(chunks):
        if len(chunk) == 1:
            out.append(chunk[0])
            continue
        if rules.mode == "named_groups":
            gid = rules.groups[idx][0]
        else:
            gid = f"{chunk[0].layer_id}+{chunk[-1].layer_id}"
        out.append(Layer(layer_id=gid,
                         param_count=sum(l.param_count for l in chunk),
                         op="group",
                         members=tuple(l.layer_id for l in chunk)))
    return out


def _named_chunks(layers: Sequence[Layer],
                  groups: Sequence[tuple[str, tuple[str, ...]]]) -> list[list[Layer]]:
    by_id = {l.layer_id: l for l in layers}
    pos = 0
    chunks: list[list[Layer]] = []
    for name, member_ids in groups:
        chunk = []
        for mid in member_ids:
            if mid not in by_id:
                raise SplitError(
                    f"group {name!r} names {mid!r}, which is not a whole layer "
                    "(it would split a parametric leaf)")
            if pos >= len(layers) or layers[pos].layer_id != mid:
                raise SplitError(
                    f"group {name!r} is not contiguous in forward order at {mid!r}")
            chunk.append(layers[pos])
            pos += 1
        chunks.append(chunk)
    if pos != len(layers):
        raise SplitError(
            f"named groups cover {pos} of {len(layers)} layers; "
            f"{layers[pos].layer_id!r} is unassigned")
    return chunks


@dataclass(frozen=True)
class PlanEntry:
    layer: Layer
    frozen: bool


@dataclass(frozen=True)
class FreezePlan:
    """Frozen prefix + trainable suffix over an ordered layer list."""

    entries: tuple[PlanEntry, ...]
    z: int
    n: int

    @property
    def trainable_params(self) -> int:
        return sum(e.layer.param_count for e in self.entries if not e.frozen)

    @property
    def frozen_params(self) -> int:
        return sum(e.layer.param_count for e in self.entries if e.frozen)

    @property
    def total_params(self) -> int:
        return self.trainable_params + self.frozen_params

    def frozen_member_count(self) -> int:
        """Original (pre-consolidation) layers inside the frozen prefix."""
        return sum(e.layer.member_count for e in self.entries if e.frozen)

    def member_count(self) -> int:
        return sum(e.layer.member_count for e in self.entries)

    def to_json(self) -> dict[str, Any]:
        return {
            "z": self.z,
            "n": self.n,
            "trainable_params": self.trainable_params,
            "frozen_params": self.frozen_params,
            "layers": [
                {"id": e.layer.layer_id, "param_count": e.layer.param_count,
                 "frozen": e.frozen}
                for e in self.entries
            ],
        }


def make_freeze_plan(layers: Sequence[Layer], n_trainable: int) -> FreezePlan:
    """Last ``n_trainable`` layers train; the prefix stays frozen."""
    n = len(layers)
    if not 1 <= n_trainable <= n:
        raise ValueError(f"n_trainable={n_trainable} outside valid interval [1, {n}]")
    boundary = n - n_trainable
    entries = tuple(PlanEntry(layer=l, frozen=i < boundary)
                    for i, l in enumerate(layers))
    return FreezePlan(entries=entries, z=n_trainable, n=n)


def layers_from_arch(arch: Sequence[LayerSpec]) -> list[Layer]:
    return [Layer(layer_id=f"layer{s.index}", param_count=s.param_count,
                  op="dense", shape=(s.d_in, s.d_out))
            for s in arch if s.has_params]


def plan_for_network(net: Network, z: int) -> FreezePlan:
    return make_freeze_plan(layers_from_arch(net.layers), z)


@dataclass(frozen=True)
class CostEstimate:
    """Analytic per-step cost under a freeze plan.

    ``peak_bytes`` is the accounting identity: parameters + gradients +
    optimizer state + retained activations. Scalars are modeled at 4 bytes
    (what a production f32 run would allocate) regardless of the trainer's
    64-bit arithmetic.
    """

    flops_per_step: int
    parameter_bytes: int
    gradient_bytes: int
    optimizer_state_bytes: int
    activation_bytes: int
    bytes_per_scalar: int = 4

    @property
    def peak_bytes(self) -> int:
        return (self.parameter_bytes + self.gradient_bytes
                + self.optimizer_state_bytes + self.activation_bytes)


def estimate_cost(plan: FreezePlan, arch: Sequence[LayerSpec], batch_size: int,
                  optimizer_kind: str = "adam",
                  bytes_per_scalar: int = 4) -> CostEstimate:
    params = [s for s in arch if s.has_params]
    if plan.n != len(params) and plan.member_count() != len(params):
        raise ValueError(
            f"plan covers {plan.n} layers but arch has {len(params)} parametric layers")
    if plan.total_params != sum(s.param_count for s in params):
        raise ValueError("plan parameter counts do not match the architecture")
    if optimizer_kind not in OPT_STATE_SCALARS:
        raise ValueError(f"unknown optimizer {optimizer_kind!r}")

    ft = plan.frozen_member_count()
    b = batch_size
    forward = sum(2 * b * s.d_in * s.d_out for s in params)
    wgrad = sum(2 * b * s.d_in * s.d_out for s in params[ft:])
    dgrad = sum(2 * b * s.d_in * s.d_out for s in params[ft + 1:])

    k = OPT_STATE_SCALARS[optimizer_kind]
    trainable = sum(s.param_count for s in params[ft:])
    total = sum(s.param_count for s in params)
    retained_scalars = b * (sum(s.d_in for s in params[ft:]) + arch[-1].d_out)
    s_bytes = bytes_per_scalar
    return CostEstimate(
        flops_per_step=forward + wgrad + dgrad,
        parameter_bytes=s_bytes * total,
        gradient_bytes=s_bytes * trainable,
        optimizer_state_bytes=s_bytes * k * trainable,
        activation_bytes=s_bytes * retained_scalars,
        bytes_per_scalar=s_bytes,
    )


@dataclass(frozen=True)
class MeasuredCost:
    mean_step_wall_time_ms: float
    measured_flops: int
    peak_tracked_bytes: int
    warmup_passes: int
    measured_passes: int


def measure_step(network: Network, plan: FreezePlan, batch: tuple[np.ndarray, Any],
                 warmup: int = 100, reps: int = 100,
                 optimizer_kind: str = "adam", lr: float = 1e-3,
                 objective: str = "cross_entropy") -> MeasuredCost:
    """Timed forward+backward+optimizer passes on one fixed batch.

    Runs ``warmup`` untimed passes, then ``reps`` timed ones, and reports the
    mean over the timed block only. The flop counter is read back from the
    backend, so it reflects what actually executed.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    from .microtrainer import engine  # late import; engine depends on plans

    x, y = batch
    saved = network.copy_params()
    try:
        if warmup:
            engine.repeat_steps(network, plan, x, y, warmup, optimizer_kind, lr,
                                objective)
        t0 = time.perf_counter()
        result = engine.repeat_steps(network, plan, x, y, reps, optimizer_kind,
                                     lr, objective)
        elapsed_ms = (time.perf_counter() - t0) * 1e3
    finally:
        network.set_params(*saved)

    per_step_flops, rem = divmod(result.flops, reps)
    if rem:
        raise AssertionError("flop counter not divisible by measured passes")
    peak = engine.tracked_peak_bytes(network, plan, x.shape[0], optimizer_kind,
                                     with_validation=False)
    return MeasuredCost(
        mean_step_wall_time_ms=elapsed_ms / reps,
        measured_flops=per_step_flops,
        peak_tracked_bytes=peak,
        warmup_passes=warmup,
        measured_passes=reps,
    )
