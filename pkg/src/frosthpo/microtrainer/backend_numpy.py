"""Pure-numpy step backend; the fallback when the compiled kernel is absent.

The math here is the reference: the compiled kernel reproduces the same
operations (up to BLAS summation order). Gradients never flow past the first
trainable layer, and only trainable layers get gradient/optimizer buffers.
"""

from __future__ import annotations

import math

import numpy as np

from .network import ACT_IDENTITY, ACT_RELU, ACT_TANH
from .runspec import (ADAM_EPS, OPT_ADAM, OPT_SGD, OPT_SGD_MOMENTUM, RunResult,
                      StepJob)
from .tasks import OBJ_CROSS_ENTROPY, OBJ_MSE

NAME = "numpy"


def _apply_act(code: int, z: np.ndarray) -> np.ndarray:
    if code == ACT_RELU:
        return np.maximum(z, 0.0)
    if code == ACT_TANH:
        return np.tanh(z)
    return z


def _act_prime_from_output(code: int, out: np.ndarray) -> np.ndarray | float:
    # local derivative recovered from the layer *output*, so only layer
    # inputs (plus the final output) ever need to stay resident
    if code == ACT_RELU:
        return (out > 0.0).astype(np.float64)
    if code == ACT_TANH:
        return 1.0 - out * out
    return 1.0


def forward_stack(job: StepJob, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns (inputs of trainable layers, final output)."""
    retained: list[np.ndarray] = []
    h = x
    for p in range(job.n_layers):
        if p >= job.first_trainable:
            retained.append(h)
        h = _apply_act(int(job.act[p]), h @ job.weights[p] + job.biases[p])
    return retained, h


def _loss_and_dpre(job: StepJob, out: np.ndarray, y) -> tuple[float, np.ndarray]:
    """Batch loss and the gradient w.r.t. the last pre-activation."""
    rows = out.shape[0]
    if job.objective == OBJ_CROSS_ENTROPY:
        shifted = out - out.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(log_z - shifted[np.arange(rows), y]))
        dout = np.exp(shifted - log_z[:, None])
        dout[np.arange(rows), y] -= 1.0
        dout /= rows
    elif job.objective == OBJ_MSE:
        diff = out - y
        loss = float(np.mean(diff * diff))
        dout = (2.0 / diff.size) * diff
    else:
        raise ValueError(f"unknown objective code {job.objective}")
    dpre = dout * _act_prime_from_output(int(job.act[-1]), out)
    return loss, dpre


def backward_stack(job: StepJob, retained: list[np.ndarray], out: np.ndarray,
                   y, flops: list[int]) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Gradients for trainable layers only; no dgrad past the boundary."""
    ft = job.first_trainable
    n = job.n_layers
    loss, dpre = _loss_and_dpre(job, out, y)
    rows = out.shape[0]
    d_w = [None] * (n - ft)
    d_b = [None] * (n - ft)
    for p in range(n - 1, ft - 1, -1):
        x_in = retained[p - ft]
        d_w[p - ft] = x_in.T @ dpre
        d_b[p - ft] = dpre.sum(axis=0)
        flops[0] += 2 * rows * int(job.d_in[p]) * int(job.d_out[p])
        if p == ft:
            break  # boundary: weight gradient yes, input gradient no
        d_in = dpre @ job.weights[p].T
        flops[0] += 2 * rows * int(job.d_in[p]) * int(job.d_out[p])
        dpre = d_in * _act_prime_from_output(int(job.act[p - 1]), x_in)
    return loss, d_w, d_b


def _forward_flops(job: StepJob, rows: int) -> int:
    return 2 * rows * int(np.sum(job.d_in * job.d_out))


def evaluate_objective(job: StepJob, x: np.ndarray, y, chunk: int,
                       flops: list[int]) -> float:
    """Mean objective over (x, y), forwarded in batch-sized chunks."""
    total = 0.0
    n = x.shape[0]
    for start in range(0, n, chunk):
        xb = x[start:start + chunk]
        yb = y[start:start + chunk]
        h = xb
        for p in range(job.n_layers):
            h = _apply_act(int(job.act[p]), h @ job.weights[p] + job.biases[p])
        flops[0] += _forward_flops(job, xb.shape[0])
        if job.objective == OBJ_CROSS_ENTROPY:
            shifted = h - h.max(axis=1, keepdims=True)
            log_z = np.log(np.exp(shifted).sum(axis=1))
            total += float(np.sum(log_z - shifted[np.arange(xb.shape[0]), yb]))
        else:
            total += float(np.sum((h - yb) ** 2))
    if job.objective == OBJ_MSE:
        return total / (n * y.shape[1])
    return total / n


def run(job: StepJob) -> RunResult:
    with np.errstate(all="ignore"):  # divergence is caught via isfinite
        return _run(job)


def _run(job: StepJob) -> RunResult:
    n = job.n_layers
    ft = job.first_trainable
    b = job.batch_size
    flops = [0]
    diverged = False
    steps_done = 0
    last_loss = 0.0

    # optimizer state only for trainable layers
    state_m = None
    state_v = None
    if job.opt in (OPT_SGD_MOMENTUM, OPT_ADAM):
        state_m = [(np.zeros_like(job.weights[p]), np.zeros_like(job.biases[p]))
                   for p in range(ft, n)]
    if job.opt == OPT_ADAM:
        state_v = [(np.zeros_like(job.weights[p]), np.zeros_like(job.biases[p]))
                   for p in range(ft, n)]

    grads_out = None
    for t in range(job.steps):
        rows = job.order[t * b:(t + 1) * b]
        xb = job.x[rows]
        yb = job.y[rows]
        retained, out = forward_stack(job, xb)
        flops[0] += _forward_flops(job, b)
        loss, d_w, d_b = backward_stack(job, retained, out, yb, flops)
        last_loss = loss
        steps_done = t + 1
        if not math.isfinite(loss):
            diverged = True
            break
        if job.collect_grads:
            grads_out = (d_w, d_b)
        lr = float(job.lr_schedule[t])
        _apply_update(job, d_w, d_b, state_m, state_v, lr, t + 1)

    objective = None
    if not diverged and job.val_x is not None:
        objective = evaluate_objective(job, job.val_x, job.val_y, b, flops)
        if not math.isfinite(objective):
            diverged = True
            objective = None

    state_scalars = 0
    for group in (state_m, state_v):
        if group is not None:
            state_scalars += sum(w.size + bias.size for w, bias in group)
    return RunResult(steps_done=steps_done, diverged=diverged, flops=flops[0],
                     objective=objective, last_train_loss=last_loss,
                     grads=grads_out, opt_state_scalars=state_scalars)


def _apply_update(job: StepJob, d_w, d_b, state_m, state_v, lr: float,
                  t: int) -> None:
    ft = job.first_trainable
    wd = job.weight_decay
    for p in range(ft, job.n_layers):
        i = p - ft
        gw, gb = d_w[i], d_b[i]
        w, bias = job.weights[p], job.biases[p]
        if job.opt == OPT_SGD:
            w -= lr * gw
            bias -= lr * gb
        elif job.opt == OPT_SGD_MOMENTUM:
            mw, mb = state_m[i]
            mw *= job.beta1
            mw += gw
            mb *= job.beta1
            mb += gb
            w -= lr * mw
            bias -= lr * mb
        else:  # adam
            mw, mb = state_m[i]
            vw, vb = state_v[i]
            mw *= job.beta1
            mw += (1.0 - job.beta1) * gw
            vw *= job.beta2
            vw += (1.0 - job.beta2) * gw * gw
            mb *= job.beta1
            mb += (1.0 - job.beta1) * gb
            vb *= job.beta2
            vb += (1.0 - job.beta2) * gb * gb
            c1 = 1.0 - job.beta1 ** t
            c2 = 1.0 - job.beta2 ** t
            w -= lr * (mw / c1) / (np.sqrt(vw / c2) + ADAM_EPS)
            bias -= lr * (mb / c1) / (np.sqrt(vb / c2) + ADAM_EPS)
        if wd != 0.0:
            # decoupled decay, weights only, so loss gradients stay checkable
            w -= lr * wd * w
