# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused train-step kernel for stacks of dense layers with a frozen prefix.

Mirrors the numpy backend's math: forward over all layers, weight gradients
for the trainable suffix only, no input gradient past the first trainable
layer, optimizer state only for trainable parameters. Buffer plan: inputs of
trainable layers plus the network output stay resident; frozen intermediates
ping-pong through at most two scratch buffers.
"""

from libc.math cimport NAN, exp, isfinite, log, pow, sqrt


cdef enum:
    ACT_IDENTITY = 0
    ACT_RELU = 1
    ACT_TANH = 2

    OBJ_CE = 0
    OBJ_MSE = 1

    OPT_SGD = 0
    OPT_SGD_MOMENTUM = 1
    OPT_ADAM = 2

    DST_SCRATCH0 = 0
    DST_SCRATCH1 = 1
    DST_OUT = 2
    DST_RET = 3

cdef double ADAM_EPS = 1e-8


cdef inline double act_apply(long code, double z) noexcept nogil:
    if code == ACT_RELU:
        return z if z > 0.0 else 0.0
    if code == ACT_TANH:
        return (2.0 / (1.0 + exp(-2.0 * z))) - 1.0
    return z


cdef inline double act_prime_out(long code, double y) noexcept nogil:
    # derivative recovered from the layer output
    if code == ACT_RELU:
        return 1.0 if y > 0.0 else 0.0
    if code == ACT_TANH:
        return 1.0 - y * y
    return 1.0


cdef void affine_forward(const double* src, long rows, long d_in, long d_out,
                         const double* w, const double* b, long act,
                         double* dst) noexcept nogil:
    cdef long i, k, m
    cdef const double* xrow
    cdef double* yrow
    for i in range(rows):
        xrow = src + i * d_in
        yrow = dst + i * d_out
        for m in range(d_out):
            yrow[m] = b[m]
        for k in range(d_in):
            for m in range(d_out):
                yrow[m] += xrow[k] * w[k * d_out + m]
        for m in range(d_out):
            yrow[m] = act_apply(act, yrow[m])


cdef void affine_forward_gather(const double[:, ::1] x, const long* rows_idx,
                                long base, long rows, long d_in, long d_out,
                                const double* w, const double* b, long act,
                                double* dst) noexcept nogil:
    """First-layer forward reading source rows out of ``x`` by index.

    ``rows_idx`` == NULL means the contiguous block starting at ``base``.
    """
    cdef long i, k, m, r
    cdef double* yrow
    for i in range(rows):
        r = rows_idx[i] if rows_idx != NULL else base + i
        yrow = dst + i * d_out
        for m in range(d_out):
            yrow[m] = b[m]
        for k in range(d_in):
            for m in range(d_out):
                yrow[m] += x[r, k] * w[k * d_out + m]
        for m in range(d_out):
            yrow[m] = act_apply(act, yrow[m])


cdef double loss_to_dpre(long objective, long last_act, double* out, long rows,
                         long d_out, const long* y_lab,
                         const double[:, ::1] y_reg, const long* idx,
                         long base) noexcept nogil:
    """Batch loss; transforms ``out`` in place into the last-layer dpre."""
    cdef long i, m, target, src_row
    cdef double mx, sumexp, logz, o, g, loss = 0.0
    cdef double* row
    for i in range(rows):
        row = out + i * d_out
        src_row = idx[i] if idx != NULL else base + i
        if objective == OBJ_CE:
            target = y_lab[src_row]
            mx = row[0]
            for m in range(1, d_out):
                if row[m] > mx:
                    mx = row[m]
            sumexp = 0.0
            for m in range(d_out):
                sumexp += exp(row[m] - mx)
            logz = log(sumexp)
            loss += logz - (row[target] - mx)
            for m in range(d_out):
                o = row[m]
                g = exp(o - mx - logz)
                if m == target:
                    g -= 1.0
                row[m] = (g / rows) * act_prime_out(last_act, o)
        else:
            for m in range(d_out):
                o = row[m]
                g = o - y_reg[src_row, m]
                loss += g * g
                row[m] = (2.0 * g / (rows * d_out)) * act_prime_out(last_act, o)
    if objective == OBJ_CE:
        return loss / rows
    return loss / (rows * d_out)


cdef double eval_loss(long objective, const double* out, long rows, long d_out,
                      const long* y_lab, const double[:, ::1] y_reg,
                      long base) noexcept nogil:
    """Summed (un-normalized) objective over an evaluation chunk."""
    cdef long i, m
    cdef double mx, sumexp, logz, g, total = 0.0
    cdef const double* row
    for i in range(rows):
        row = out + i * d_out
        if objective == OBJ_CE:
            mx = row[0]
            for m in range(1, d_out):
                if row[m] > mx:
                    mx = row[m]
            sumexp = 0.0
            for m in range(d_out):
                sumexp += exp(row[m] - mx)
            logz = log(sumexp)
            total += logz - (row[y_lab[base + i]] - mx)
        else:
            for m in range(d_out):
                g = row[m] - y_reg[base + i, m]
                total += g * g
    return total


def run_loop(long n, long ft,
             const long[::1] d_in, const long[::1] d_out, const long[::1] act,
             double[::1] params, const long[::1] w_off, const long[::1] b_off,
             double[::1] grads, const long[::1] gw_off, const long[::1] gb_off,
             double[::1] opt_m, double[::1] opt_v,
             const double[:, ::1] x, const long[::1] y_lab,
             const double[:, ::1] y_reg,
             const long[::1] order, long batch, long steps, long objective,
             long opt, const double[::1] lr_sched, double weight_decay,
             double beta1, double beta2,
             const double[:, ::1] val_x, const long[::1] val_y_lab,
             const double[:, ::1] val_y_reg, long has_val,
             double[::1] ret, const long[::1] ret_off,
             double[::1] out_buf, double[:, ::1] scratch,
             const long[::1] dst_code,
             long[::1] res_i, double[::1] res_f):
    """res_i receives [steps_done, diverged, flops]; res_f [objective, last_loss]."""
    cdef long t, j, p, i, k, m, base, rows, start, w_len, chunk
    cdef long long flops = 0
    cdef double loss = 0.0, lr, acc, o, c1, c2, total = NAN
    cdef bint diverged = 0
    cdef long steps_done = 0
    cdef double* src = NULL
    cdef double* dst = NULL
    cdef double* hbuf
    cdef double* wptr
    cdef double* retp
    cdef double* gw
    cdef double* gb
    cdef double* mom
    cdef double* vel

    cdef double* params_p = &params[0] if params.shape[0] else NULL
    cdef double* grads_p = &grads[0] if grads.shape[0] else NULL
    cdef double* opt_m_p = &opt_m[0] if opt_m.shape[0] else NULL
    cdef double* opt_v_p = &opt_v[0] if opt_v.shape[0] else NULL
    cdef double* ret_p = &ret[0] if ret.shape[0] else NULL
    cdef double* out_p = &out_buf[0]
    cdef double* s0 = NULL
    cdef double* s1 = NULL
    cdef const long* order_p = &order[0] if order.shape[0] else NULL
    cdef const long* y_lab_p = &y_lab[0] if y_lab.shape[0] else NULL
    cdef const long* val_y_lab_p = &val_y_lab[0] if val_y_lab.shape[0] else NULL
    if scratch.shape[0] > 0:
        s0 = &scratch[0, 0]
    if scratch.shape[0] > 1:
        s1 = &scratch[1, 0]

    with nogil:
        for t in range(steps):
            base = t * batch
            # forward: frozen intermediates go through scratch; trainable
            # layer inputs land in their retained buffers. When layer 0 is
            # itself trainable, the gathered batch is its retained input.
            if ft == 0:
                retp = ret_p + ret_off[0]
                for i in range(batch):
                    k = order_p[base + i]
                    for m in range(d_in[0]):
                        retp[i * d_in[0] + m] = x[k, m]
            for j in range(n):
                if dst_code[j] == DST_SCRATCH0:
                    dst = s0
                elif dst_code[j] == DST_SCRATCH1:
                    dst = s1
                elif dst_code[j] == DST_OUT:
                    dst = out_p
                else:
                    dst = ret_p + ret_off[j + 1]
                if j == 0:
                    if ft == 0:
                        affine_forward(ret_p + ret_off[0], batch, d_in[0], d_out[0],
                                       params_p + w_off[0], params_p + b_off[0],
                                       act[0], dst)
                    else:
                        affine_forward_gather(x, order_p + base, 0, batch,
                                              d_in[0], d_out[0],
                                              params_p + w_off[0], params_p + b_off[0],
                                              act[0], dst)
                else:
                    affine_forward(src, batch, d_in[j], d_out[j],
                                   params_p + w_off[j], params_p + b_off[j],
                                   act[j], dst)
                flops += 2 * batch * d_in[j] * d_out[j]
                src = dst

            loss = loss_to_dpre(objective, act[n - 1], out_p, batch,
                                d_out[n - 1], y_lab_p, y_reg, order_p + base, 0)
            steps_done = t + 1
            if not isfinite(loss):
                diverged = 1
                break

            # backward: wgrad for every trainable layer; fused dgrad written
            # over the (now dead) retained input of the producing layer
            hbuf = out_p
            for p in range(n - 1, ft - 1, -1):
                retp = ret_p + ret_off[p]
                gw = grads_p + gw_off[p]
                gb = grads_p + gb_off[p]
                for k in range(d_in[p]):
                    for m in range(d_out[p]):
                        acc = 0.0
                        for i in range(batch):
                            acc += retp[i * d_in[p] + k] * hbuf[i * d_out[p] + m]
                        gw[k * d_out[p] + m] = acc
                for m in range(d_out[p]):
                    acc = 0.0
                    for i in range(batch):
                        acc += hbuf[i * d_out[p] + m]
                    gb[m] = acc
                flops += 2 * batch * d_in[p] * d_out[p]
                if p == ft:
                    break
                wptr = params_p + w_off[p]
                for i in range(batch):
                    for k in range(d_in[p]):
                        acc = 0.0
                        for m in range(d_out[p]):
                            acc += hbuf[i * d_out[p] + m] * wptr[k * d_out[p] + m]
                        o = retp[i * d_in[p] + k]
                        retp[i * d_in[p] + k] = acc * act_prime_out(act[p - 1], o)
                flops += 2 * batch * d_in[p] * d_out[p]
                hbuf = retp

            # update trainable layers; decoupled weight decay on weights only
            lr = lr_sched[t]
            for p in range(ft, n):
                w_len = d_in[p] * d_out[p]
                wptr = params_p + w_off[p]
                gw = grads_p + gw_off[p]
                gb = grads_p + gb_off[p]
                if opt == OPT_SGD:
                    for k in range(w_len):
                        wptr[k] -= lr * gw[k]
                    for m in range(d_out[p]):
                        params_p[b_off[p] + m] -= lr * gb[m]
                elif opt == OPT_SGD_MOMENTUM:
                    mom = opt_m_p + gw_off[p]
                    for k in range(w_len):
                        mom[k] = beta1 * mom[k] + gw[k]
                        wptr[k] -= lr * mom[k]
                    mom = opt_m_p + gb_off[p]
                    for m in range(d_out[p]):
                        mom[m] = beta1 * mom[m] + gb[m]
                        params_p[b_off[p] + m] -= lr * mom[m]
                else:
                    c1 = 1.0 - pow(beta1, <double> (t + 1))
                    c2 = 1.0 - pow(beta2, <double> (t + 1))
                    mom = opt_m_p + gw_off[p]
                    vel = opt_v_p + gw_off[p]
                    for k in range(w_len):
                        mom[k] = beta1 * mom[k] + (1.0 - beta1) * gw[k]
                        vel[k] = beta2 * vel[k] + (1.0 - beta2) * gw[k] * gw[k]
                        wptr[k] -= lr * (mom[k] / c1) / (sqrt(vel[k] / c2) + ADAM_EPS)
                    mom = opt_m_p + gb_off[p]
                    vel = opt_v_p + gb_off[p]
                    for m in range(d_out[p]):
                        mom[m] = beta1 * mom[m] + (1.0 - beta1) * gb[m]
                        vel[m] = beta2 * vel[m] + (1.0 - beta2) * gb[m] * gb[m]
                        params_p[b_off[p] + m] -= lr * (mom[m] / c1) / (sqrt(vel[m] / c2) + ADAM_EPS)
                if weight_decay != 0.0:
                    for k in range(w_len):
                        wptr[k] -= lr * weight_decay * wptr[k]

        # validation: chunked forward at the training batch size, no retention
        if has_val and not diverged:
            total = 0.0
            rows = val_x.shape[0]
            start = 0
            while start < rows:
                chunk = batch if start + batch <= rows else rows - start
                for j in range(n):
                    if j == n - 1:
                        dst = out_p
                    elif j % 2 == 0:
                        dst = s0
                    else:
                        dst = s1
                    if j == 0:
                        affine_forward_gather(val_x, NULL, start, chunk,
                                              d_in[0], d_out[0],
                                              params_p + w_off[0],
                                              params_p + b_off[0], act[0], dst)
                    else:
                        affine_forward(src, chunk, d_in[j], d_out[j],
                                       params_p + w_off[j], params_p + b_off[j],
                                       act[j], dst)
                    flops += 2 * chunk * d_in[j] * d_out[j]
                    src = dst
                total += eval_loss(objective, out_p, chunk, d_out[n - 1],
                                   val_y_lab_p, val_y_reg, start)
                start += batch
            if objective == OBJ_CE:
                total /= rows
            else:
                total /= rows * d_out[n - 1]
            if not isfinite(total):
                diverged = 1
                total = NAN

    res_i[0] = steps_done
    res_i[1] = 1 if diverged else 0
    res_i[2] = <long> flops
    res_f[0] = total
    res_f[1] = loss
