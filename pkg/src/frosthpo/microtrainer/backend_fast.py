"""Compiled step backend: packs a job into flat buffers for the C kernel."""

from __future__ import annotations

import numpy as np

from . import _fastloop
from .runspec import OPT_ADAM, OPT_SGD_MOMENTUM, RunResult, StepJob
from .tasks import OBJ_CROSS_ENTROPY

NAME = "compiled"

_EMPTY_F1 = np.zeros(0, dtype=np.float64)
_EMPTY_F2 = np.zeros((0, 1), dtype=np.float64)
_EMPTY_I1 = np.zeros(0, dtype=np.int64)

DST_SCRATCH0 = 0
DST_SCRATCH1 = 1
DST_OUT = 2
DST_RET = 3


def _dst_codes(n: int, ft: int) -> np.ndarray:
    codes = np.empty(n, dtype=np.int64)
    scratch_turn = 0
    for j in range(n):
        if j == n - 1:
            codes[j] = DST_OUT
        elif j + 1 >= ft:
            codes[j] = DST_RET
        else:
            codes[j] = DST_SCRATCH0 if scratch_turn == 0 else DST_SCRATCH1
            scratch_turn ^= 1
    return codes


def run(job: StepJob) -> RunResult:
    from .engine import scratch_pool_buffers  # shared accounting rule

    n = job.n_layers
    ft = job.first_trainable
    b = job.batch_size
    d_in, d_out = job.d_in, job.d_out

    w_off = np.zeros(n, dtype=np.int64)
    b_off = np.zeros(n, dtype=np.int64)
    pos = 0
    for p in range(n):
        w_off[p] = pos
        pos += int(d_in[p] * d_out[p])
        b_off[p] = pos
        pos += int(d_out[p])
    params = np.empty(pos, dtype=np.float64)
    for p in range(n):
        params[w_off[p]:b_off[p]] = job.weights[p].reshape(-1)
        params[b_off[p]:b_off[p] + d_out[p]] = job.biases[p]

    gw_off = np.zeros(n, dtype=np.int64)
    gb_off = np.zeros(n, dtype=np.int64)
    pos = 0
    for p in range(ft, n):
        gw_off[p] = pos
        pos += int(d_in[p] * d_out[p])
        gb_off[p] = pos
        pos += int(d_out[p])
    grads = np.zeros(pos, dtype=np.float64)
    opt_m = np.zeros(pos, dtype=np.float64) if job.opt in (OPT_SGD_MOMENTUM, OPT_ADAM) else _EMPTY_F1
    opt_v = np.zeros(pos, dtype=np.float64) if job.opt == OPT_ADAM else _EMPTY_F1

    ret_off = np.zeros(n, dtype=np.int64)
    pos = 0
    for p in range(ft, n):
        ret_off[p] = pos
        pos += int(b * d_in[p])
    ret = np.zeros(pos, dtype=np.float64)
    out_buf = np.zeros(int(b * d_out[n - 1]), dtype=np.float64)

    has_val = job.val_x is not None
    pool = scratch_pool_buffers(n, ft, with_validation=has_val)
    max_width = int(max(d_in.max(), d_out.max()))
    scratch = np.zeros((pool, b * max_width), dtype=np.float64)

    if job.objective == OBJ_CROSS_ENTROPY:
        y_lab = np.ascontiguousarray(job.y, dtype=np.int64)
        y_reg = _EMPTY_F2
        val_y_lab = np.ascontiguousarray(job.val_y, dtype=np.int64) if has_val else _EMPTY_I1
        val_y_reg = _EMPTY_F2
    else:
        y_lab = _EMPTY_I1
        y_reg = (np.ascontiguousarray(job.y, dtype=np.float64)
                 if getattr(job.y, "ndim", 0) == 2 else _EMPTY_F2)
        val_y_lab = _EMPTY_I1
        val_y_reg = np.ascontiguousarray(job.val_y, dtype=np.float64) if has_val else _EMPTY_F2

    res_i = np.zeros(3, dtype=np.int64)
    res_f = np.zeros(2, dtype=np.float64)
    _fastloop.run_loop(
        n, ft, d_in, d_out, job.act,
        params, w_off, b_off,
        grads, gw_off, gb_off,
        opt_m, opt_v,
        np.ascontiguousarray(job.x, dtype=np.float64), y_lab, y_reg,
        np.ascontiguousarray(job.order, dtype=np.int64),
        b, job.steps, job.objective,
        job.opt, np.ascontiguousarray(job.lr_schedule, dtype=np.float64),
        job.weight_decay, job.beta1, job.beta2,
        np.ascontiguousarray(job.val_x, dtype=np.float64) if has_val else _EMPTY_F2,
        val_y_lab, val_y_reg, 1 if has_val else 0,
        ret, ret_off, out_buf, scratch, _dst_codes(n, ft),
        res_i, res_f,
    )

    # only the trainable suffix is written back; frozen arrays stay untouched
    for p in range(ft, n):
        job.weights[p][...] = params[w_off[p]:b_off[p]].reshape(int(d_in[p]), int(d_out[p]))
        job.biases[p][...] = params[b_off[p]:b_off[p] + d_out[p]]

    grads_out = None
    if job.collect_grads:
        d_w = [grads[gw_off[p]:gw_off[p] + d_in[p] * d_out[p]]
               .reshape(int(d_in[p]), int(d_out[p])).copy() for p in range(ft, n)]
        d_b = [grads[gb_off[p]:gb_off[p] + d_out[p]].copy() for p in range(ft, n)]
        grads_out = (d_w, d_b)

    diverged = bool(res_i[1])
    objective = None
    if has_val and not diverged:
        objective = float(res_f[0])
    return RunResult(steps_done=int(res_i[0]), diverged=diverged,
                     flops=int(res_i[2]), objective=objective,
                     last_train_loss=float(res_f[1]), grads=grads_out,
                     opt_state_scalars=int(opt_m.size + opt_v.size))
