"""Training orchestration: freeze-plan-aware training, gradcheck, accounting.

All heavy lifting happens in a step backend (numpy fallback or the compiled
kernel); this module prepares jobs, enforces plan/network consistency, and
derives the tracked-memory accounting both backends follow.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..freezer import FreezePlan, estimate_cost
from ..records import DIVERGED_OBJECTIVE, CostRecord, EvalRecord
from . import active_backend
from .network import ACT_CODES, ACT_IDENTITY, ArchitectureError, Network
from .runspec import OPT_CODES, OPT_STATE_SCALARS, RunResult, StepJob
from .tasks import OBJ_CODES, Task, TrainBudget


class UsageError(RuntimeError):
    pass


HP_DEFAULTS = {
    "optimizer": "adam",
    "learning_rate": 1e-3,
    "weight_decay": 0.0,
    "beta1": 0.9,
    "beta2": 0.999,
    "warmup_fraction": 0.0,
    "cooldown_fraction": 0.0,
}


def hp_values(hp: Any) -> dict[str, Any]:
    values = hp if isinstance(hp, dict) else dict(hp.values)
    out = dict(HP_DEFAULTS)
    out.update(values)
    if out["optimizer"] not in OPT_CODES:
        raise ValueError(f"unknown optimizer {out['optimizer']!r}")
    return out


def lr_schedule(values: dict[str, Any], steps: int) -> np.ndarray:
    """Linear warmup to the base rate, then linear cooldown over the tail."""
    base = float(values["learning_rate"])
    warm = int(round(float(values["warmup_fraction"]) * steps))
    cool = int(round(float(values["cooldown_fraction"]) * steps))
    sched = np.full(steps, base, dtype=np.float64)
    for t in range(steps):
        f = 1.0
        if warm > 0 and t < warm:
            f *= (t + 1) / warm
        remaining = steps - t
        if cool > 0 and remaining <= cool:
            f *= remaining / cool
        sched[t] = base * f
    return sched


@dataclass(frozen=True)
class CanonicalStack:
    """Fused dense+activation triples; standalone activations folded away."""

    d_in: np.ndarray
    d_out: np.ndarray
    act: np.ndarray
    first_trainable: int

    @property
    def n_layers(self) -> int:
        return len(self.d_in)

    @property
    def max_width(self) -> int:
        return int(max(self.d_in.max(), self.d_out.max()))


def canonical_stack(network: Network, plan: FreezePlan) -> CanonicalStack:
    _check_plan(network, plan)
    d_in, d_out, act = [], [], []
    for spec in network.layers:
        if spec.has_params:
            d_in.append(spec.d_in)
            d_out.append(spec.d_out)
            act.append(ACT_CODES[spec.activation])
        else:
            code = ACT_CODES[spec.activation]
            if code == ACT_IDENTITY:
                continue
            if not act:
                raise ArchitectureError(
                    "activation-only layer before any parametric layer is unsupported")
            if act[-1] != ACT_IDENTITY:
                raise ArchitectureError(
                    "cannot fold activation-only layer into a nonlinear layer")
            act[-1] = code
    return CanonicalStack(
        d_in=np.asarray(d_in, dtype=np.int64),
        d_out=np.asarray(d_out, dtype=np.int64),
        act=np.asarray(act, dtype=np.int64),
        first_trainable=plan.frozen_member_count(),
    )


def _check_plan(network: Network, plan: FreezePlan) -> None:
    counts = [s.param_count for s in network.parametric_layers]
    if plan.member_count() != len(counts):
        raise UsageError(
            f"plan covers {plan.member_count()} layers, network has {len(counts)}")
    idx = 0
    for entry in plan.entries:
        m = entry.layer.member_count
        if sum(counts[idx:idx + m]) != entry.layer.param_count:
            raise UsageError(
                f"plan entry {entry.layer.layer_id!r} was built for a different network")
        idx += m


def _resolve(backend) :
    return backend if backend is not None else active_backend()


def _base_job(network: Network, plan: FreezePlan, objective: str) -> StepJob:
    stack = canonical_stack(network, plan)
    return StepJob(
        d_in=stack.d_in, d_out=stack.d_out, act=stack.act,
        weights=network.weights, biases=network.biases,
        first_trainable=stack.first_trainable,
        x=np.zeros((0, network.d_in)), y=np.zeros(0, dtype=np.int64),
        order=np.zeros(0, dtype=np.int64), batch_size=1, steps=0,
        objective=OBJ_CODES[objective],
    )


def train(network: Network, task: Task, hp: Any, plan: FreezePlan,
          budget: TrainBudget, seed: int, backend=None) -> EvalRecord:
    """Train the trainable suffix and report the validation objective.

    Deterministic given (network.init_seed, task.generator_seed, hp, plan,
    budget, seed); the explicit seed orders the training stream. A non-finite
    loss ends the run with the diverged sentinel.
    """
    backend = _resolve(backend)
    values = hp_values(hp)
    x_train, y_train, x_val, y_val = task.data()
    steps = budget.effective_steps(task.n_train)
    if steps < 1:
        raise ValueError(
            f"budget yields zero steps at sample_fraction={budget.sample_fraction}")

    rng = np.random.Generator(np.random.PCG64(int(seed)))
    order = rng.permutation(task.n_train)[: steps * budget.batch_size]
    order = np.ascontiguousarray(order, dtype=np.int64)

    job = _base_job(network, plan, task.objective)
    job.x, job.y = x_train, y_train
    job.order = order
    job.batch_size = budget.batch_size
    job.steps = steps
    job.opt = OPT_CODES[values["optimizer"]]
    job.lr_schedule = lr_schedule(values, steps)
    job.weight_decay = float(values["weight_decay"])
    job.beta1 = float(values["beta1"])
    job.beta2 = float(values["beta2"])
    job.val_x, job.val_y = x_val, y_val

    t0 = time.perf_counter()
    result = backend.run(job)
    wall_ms = (time.perf_counter() - t0) * 1e3

    peak = tracked_peak_bytes(network, plan, budget.batch_size,
                              values["optimizer"], with_validation=True)
    objective = DIVERGED_OBJECTIVE if result.diverged else float(result.objective)
    return EvalRecord(
        config_id=int(getattr(hp, "id", -1)),
        fidelity={"layers": plan.z, "data_fraction": budget.sample_fraction},
        seed=int(seed),
        objective=objective,
        cost=CostRecord(flops=result.flops, peak_bytes=peak, wall_ms=wall_ms,
                        batch_size=budget.batch_size),
        diverged=result.diverged,
        steps_run=result.steps_done,
        meta={"backend": backend.NAME, "last_train_loss": result.last_train_loss,
              "optimizer": values["optimizer"],
              "opt_state_scalars": result.opt_state_scalars},
    )


# -- two-phase forward/backward API ------------------------------------------

@dataclass
class ForwardCache:
    network: Network
    plan: FreezePlan
    retained_inputs: list[np.ndarray]  # inputs of trainable layers, in order
    output: np.ndarray

    def retained_scalars(self) -> int:
        return sum(a.size for a in self.retained_inputs) + self.output.size


def forward_batch(network: Network, plan: FreezePlan, x: np.ndarray) -> ForwardCache:
    """Forward pass retaining exactly the trainable-layer inputs + output.

    Frozen-prefix intermediates are not part of the cache; they are released
    as the forward pass moves on.
    """
    from . import backend_numpy

    job = _base_job(network, plan, "mse")
    retained, out = backend_numpy.forward_stack(job, np.asarray(x, dtype=np.float64))
    return ForwardCache(network=network, plan=plan, retained_inputs=retained,
                        output=out)


@dataclass
class BackwardResult:
    loss: float
    weight_grads: dict[int, np.ndarray]  # keyed by trainable layer position
    bias_grads: dict[int, np.ndarray]


def backward(network: Network, plan: FreezePlan, cache: ForwardCache,
             targets, objective: str = "cross_entropy") -> BackwardResult:
    """Gradients for trainable layers only; raises without a matching forward."""
    from . import backend_numpy

    if not isinstance(cache, ForwardCache):
        raise UsageError("backward requires the cache from a prior forward_batch")
    if cache.network is not network or cache.plan is not plan:
        raise UsageError("forward cache does not match this network/plan")

    job = _base_job(network, plan, objective)
    flops = [0]
    loss, d_w, d_b = backend_numpy.backward_stack(
        job, cache.retained_inputs, cache.output, targets, flops)
    ft = job.first_trainable
    return BackwardResult(
        loss=loss,
        weight_grads={ft + i: g for i, g in enumerate(d_w)},
        bias_grads={ft + i: g for i, g in enumerate(d_b)},
    )


# -- gradcheck ----------------------------------------------------------------

def loss_and_grads(network: Network, plan: FreezePlan, x: np.ndarray, y,
                   objective: str, backend=None) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """One un-updating step: batch loss plus trainable-layer gradients."""
    backend = _resolve(backend)
    rows = x.shape[0]
    job = _base_job(network, plan, objective)
    job.x, job.y = np.asarray(x, dtype=np.float64), y
    job.order = np.arange(rows, dtype=np.int64)
    job.batch_size = rows
    job.steps = 1
    job.lr_schedule = np.zeros(1)
    job.collect_grads = True
    result = backend.run(job)
    d_w, d_b = result.grads
    return result.last_train_loss, d_w, d_b


def loss_only(network: Network, plan: FreezePlan, x: np.ndarray, y,
              objective: str, backend=None) -> float:
    backend = _resolve(backend)
    job = _base_job(network, plan, objective)
    job.val_x, job.val_y = np.asarray(x, dtype=np.float64), y
    job.batch_size = x.shape[0]
    result = backend.run(job)
    return float(result.objective)


def finite_diff_gradcheck(network: Network, plan: FreezePlan, task: Task,
                          eps: float = 1e-5, batch_size: int = 32,
                          backend=None, atol: float = 1e-10) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Every trainable scalar is perturbed by +/-eps; pairs where both sides are
    below ``atol`` are vacuous and excluded from the relative comparison.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError("eps must be in (0, 1e-2]")
    backend = _resolve(backend)
    x_train, y_train, _, _ = task.data()
    x = x_train[:batch_size]
    y = y_train[:batch_size]

    _, d_w, d_b = loss_and_grads(network, plan, x, y, task.objective, backend)
    ft = plan.frozen_member_count()
    max_rel = 0.0
    for i in range(len(d_w)):
        p = ft + i
        for arr, grad in ((network.weights[p], d_w[i]),
                          (network.biases[p], d_b[i])):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for j in range(flat.size):
                saved = flat[j]
                flat[j] = saved + eps
                lo_hi = loss_only(network, plan, x, y, task.objective, backend)
                flat[j] = saved - eps
                lo_lo = loss_only(network, plan, x, y, task.objective, backend)
                flat[j] = saved
                fd = (lo_hi - lo_lo) / (2.0 * eps)
                g = gflat[j]
                scale = max(abs(fd), abs(g))
                if scale < atol:
                    continue
                max_rel = max(max_rel, abs(fd - g) / scale)
    return max_rel


# -- resource accounting -------------------------------------------------------

def scratch_pool_buffers(n_layers: int, frozen: int, with_validation: bool) -> int:
    """Ping-pong buffers beyond the accounted set (each batch x max-width)."""
    train_need = min(2, max(0, frozen - 1))
    val_need = min(2, n_layers - 1) if with_validation else 0
    return max(train_need, val_need)


def tracked_peak_bytes(network: Network, plan: FreezePlan, batch_size: int,
                       optimizer_kind: str, with_validation: bool,
                       bytes_per_scalar: int = 8) -> int:
    """Peak bytes of the persistent-buffer plan the backends follow.

    Equals the cost-model identity (parameters + gradients + optimizer state
    + retained activations) plus the shared scratch pool, at the trainer's
    actual 8-byte scalars.
    """
    est = estimate_cost(plan, network.layers, batch_size, optimizer_kind,
                        bytes_per_scalar=bytes_per_scalar)
    stack = canonical_stack(network, plan)
    pool = scratch_pool_buffers(stack.n_layers, stack.first_trainable,
                                with_validation)
    return est.peak_bytes + pool * batch_size * stack.max_width * bytes_per_scalar


def optimizer_state_scalars(plan: FreezePlan, optimizer_kind: str) -> int:
    return OPT_STATE_SCALARS[optimizer_kind] * plan.trainable_params


def repeat_steps(network: Network, plan: FreezePlan, x: np.ndarray, y,
                 steps: int, optimizer_kind: str, lr: float, objective: str,
                 backend=None) -> RunResult:
    """Run forward+backward+update ``steps`` times on one fixed batch."""
    backend = _resolve(backend)
    rows = x.shape[0]
    job = _base_job(network, plan, objective)
    job.x, job.y = np.asarray(x, dtype=np.float64), y
    job.order = np.tile(np.arange(rows, dtype=np.int64), steps)
    job.batch_size = rows
    job.steps = steps
    job.opt = OPT_CODES[optimizer_kind]
    job.lr_schedule = np.full(steps, lr, dtype=np.float64)
    return backend.run(job)
