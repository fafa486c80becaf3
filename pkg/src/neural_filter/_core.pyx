# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: batched DOPRI5 over the built-in vector fields and
mini-batch Adam training of a ReLU/linear MLP stored as one flat vector.

Mirrors ``_pykernels`` call for call.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs, pow, isfinite
from libc.stdlib cimport malloc, free
from libc.string cimport memset, memcpy

cnp.import_array()

cdef enum:
    MAXDIM = 8

cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192, B5 = -2187.0 / 6784, B6 = 11.0 / 84
cdef double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920, E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40

cdef double SAFETY = 0.9, MIN_FACTOR = 0.2, MAX_FACTOR = 5.0
cdef double DET_TOL = 1e-12

cdef int OK = 0, MAX_STEPS_EXCEEDED = 1, NON_FINITE = 2, DEGENERATE = 3


cdef int rhs(int code, const double* p, const double* x, double* out) nogil:
    cdef double phi, cphi, sphi, m11, m12, m21, m22, d1, d2, r1, r2, det
    if code == 1:
        out[0] = x[1]
        out[1] = -(p[0] / p[1]) * sin(x[0])
    elif code == 2:
        out[0] = x[1]
        out[1] = p[0] * (1.0 - x[0] * x[0]) * x[1] - x[0]
    elif code == 3:
        out[0] = p[0] * (x[1] - x[0])
        out[1] = x[0] * (p[1] - x[2]) - x[1]
        out[2] = x[0] * x[1] - p[2] * x[2]
    elif code == 4:
        # p = m1, m2, l1, l2, g
        phi = x[2] - x[0]
        cphi = cos(phi)
        sphi = sin(phi)
        m11 = (p[0] + p[1]) * p[2] * p[2]
        m12 = p[1] * p[2] * p[3] * cphi
        m21 = p[2] * cphi
        m22 = p[3]
        d1 = -p[1] * p[2] * p[3] * sphi * x[3] * x[3] + (p[0] + p[1]) * p[4] * p[2] * sin(x[0])
        d2 = p[2] * sphi * x[1] * x[1] + p[4] * sin(x[2])
        r1 = 0.0 - d1
        r2 = -d2
        det = m11 * m22 - m12 * m21
        if fabs(det) < DET_TOL:
            return DEGENERATE
        out[0] = x[1]
        out[1] = (m22 * r1 - m12 * r2) / det
        out[2] = x[3]
        out[3] = (m11 * r2 - m21 * r1) / det
    else:
        return -1
    return OK


cdef int integrate_row(int code, const double* p, double* y, int d, double t_span,
                       double rtol, double atol, double h0, long max_steps) nogil:
    cdef double k1[MAXDIM]
    cdef double k2[MAXDIM]
    cdef double k3[MAXDIM]
    cdef double k4[MAXDIM]
    cdef double k5[MAXDIM]
    cdef double k6[MAXDIM]
    cdef double k7[MAXDIM]
    cdef double tmp[MAXDIM]
    cdef double ynew[MAXDIM]
    cdef double t = 0.0, h, remaining, err, sc, acc, en, factor, a, b
    cdef long steps = 0
    cdef int j, last, st
    h = h0 if h0 < t_span else t_span
    while True:
        remaining = t_span - t
        last = h >= remaining
        if last:
            h = remaining
        st = rhs(code, p, y, k1)
        if st: return st
        for j in range(d):
            tmp[j] = y[j] + h * (A21 * k1[j])
        st = rhs(code, p, tmp, k2)
        if st: return st
        for j in range(d):
            tmp[j] = y[j] + h * (A31 * k1[j] + A32 * k2[j])
        st = rhs(code, p, tmp, k3)
        if st: return st
        for j in range(d):
            tmp[j] = y[j] + h * (A41 * k1[j] + A42 * k2[j] + A43 * k3[j])
        st = rhs(code, p, tmp, k4)
        if st: return st
        for j in range(d):
            tmp[j] = y[j] + h * (A51 * k1[j] + A52 * k2[j] + A53 * k3[j] + A54 * k4[j])
        st = rhs(code, p, tmp, k5)
        if st: return st
        for j in range(d):
            tmp[j] = y[j] + h * (A61 * k1[j] + A62 * k2[j] + A63 * k3[j] + A64 * k4[j] + A65 * k5[j])
        st = rhs(code, p, tmp, k6)
        if st: return st
        for j in range(d):
            ynew[j] = y[j] + h * (B1 * k1[j] + B3 * k3[j] + B4 * k4[j] + B5 * k5[j] + B6 * k6[j])
        st = rhs(code, p, ynew, k7)
        if st: return st
        acc = 0.0
        for j in range(d):
            err = h * (E1 * k1[j] + E3 * k3[j] + E4 * k4[j] + E5 * k5[j] + E6 * k6[j] + E7 * k7[j])
            a = fabs(y[j])
            b = fabs(ynew[j])
            sc = atol + rtol * (a if a > b else b)
            acc += (err / sc) * (err / sc)
            if not isfinite(ynew[j]):
                return NON_FINITE
        en = sqrt(acc / d)
        if not isfinite(en):
            return NON_FINITE
        factor = SAFETY * pow(en if en > 1e-300 else 1e-300, -0.2)
        if factor < MIN_FACTOR:
            factor = MIN_FACTOR
        elif factor > MAX_FACTOR:
            factor = MAX_FACTOR
        steps += 1
        if en <= 1.0:
            memcpy(y, ynew, d * sizeof(double))
            if last:
                return OK
            t = t + h
        elif factor > 1.0:
            factor = 1.0
        h = h * factor
        if steps >= max_steps:
            return MAX_STEPS_EXCEEDED


def integrate_batch(int code, const double[::1] params, x0, double t_span, double rtol,
                    double atol, double h0, long max_steps):
    """Integrate each row of ``x0`` over ``[0, t_span]``.

    Returns ``(x, status, bad_row)`` like ``_ode.dopri5``.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.array(x0, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = y.shape[0], i
    cdef int d = <int>y.shape[1]
    cdef int st = OK
    cdef double* yp = <double*>y.data
    cdef const double* pp = &params[0] if params.shape[0] else NULL
    if d > MAXDIM:
        raise ValueError("state dimension too large for compiled kernel")
    with nogil:
        for i in range(n):
            st = integrate_row(code, pp, yp + i * d, d, t_span, rtol, atol, h0, max_steps)
            if st != OK:
                break
    if st == DEGENERATE:
        from neural_filter.errors import DegenerateConfigurationError
        raise DegenerateConfigurationError("singular mass matrix")
    if st == -1:
        raise ValueError(f"unknown system code {code}")
    return y, st, (i if st != OK else -1)


def run_batches(double[::1] flat, double[::1] m, double[::1] v, long step,
                int input_dim, const long[::1] widths, const long[::1] acts,
                const double[:, ::1] X, const double[:, ::1] Y, const long[::1] order,
                long batch_start, long batch_stop, long batch_size,
                double lr, double beta1, double beta2, double eps,
                const double[::1] grad_mask):
    """Run Adam updates for mini-batches ``batch_start..batch_stop-1`` of
    ``order``. Updates ``flat``, ``m`` and ``v`` in place.

    Returns ``(losses, step, status)``; status 1 means a non-finite loss or
    gradient stopped the loop before that batch's update.
    """
    cdef int L = <int>widths.shape[0]
    cdef long n = order.shape[0]
    cdef long n_params = flat.shape[0]
    cdef int out_dim = <int>widths[L - 1]
    cdef int l, o, i, j, k, fan_in, width, max_w = input_dim
    cdef long bi, r, bs, row, n_done = 0
    cdef long total_act = input_dim
    cdef double acc, diff, loss, g, mh, vh, bc1, bc2, scale
    cdef int status = 0

    for l in range(L):
        total_act += widths[l]
        if widths[l] > max_w:
            max_w = <int>widths[l]

    cdef long* w_off = <long*>malloc(L * sizeof(long))
    cdef long* a_off = <long*>malloc((L + 1) * sizeof(long))
    cdef double* act = <double*>malloc(batch_size * total_act * sizeof(double))
    cdef double* delta = <double*>malloc(batch_size * max_w * sizeof(double))
    cdef double* delta_prev = <double*>malloc(batch_size * max_w * sizeof(double))
    cdef double* grad = <double*>malloc(n_params * sizeof(double))
    cdef double* swap
    cdef double* W
    cdef double* bvec
    cdef double* a_in
    cdef double* a_out
    cdef long off = 0
    losses = np.zeros(batch_stop - batch_start, dtype=np.float64)
    cdef double[::1] lv = losses

    a_off[0] = 0
    fan_in = input_dim
    for l in range(L):
        w_off[l] = off
        off += widths[l] * fan_in + widths[l]
        a_off[l + 1] = a_off[l] + fan_in
        fan_in = <int>widths[l]
    # a_off[l] holds the column offset of the input to layer l inside a row of act

    with nogil:
        for bi in range(batch_start, batch_stop):
            r = bi * batch_size
            bs = batch_size if r + batch_size <= n else n - r
            # forward
            for k in range(bs):
                row = order[r + k]
                for j in range(input_dim):
                    act[k * total_act + j] = X[row, j]
            fan_in = input_dim
            for l in range(L):
                width = <int>widths[l]
                W = &flat[0] + w_off[l]
                bvec = W + width * fan_in
                for k in range(bs):
                    a_in = act + k * total_act + a_off[l]
                    a_out = act + k * total_act + a_off[l] + fan_in
                    for o in range(width):
                        acc = 0.0
                        for i in range(fan_in):
                            acc = acc + W[o * fan_in + i] * a_in[i]
                        acc = acc + bvec[o]
                        if acts[l] == 1 and not (acc > 0.0):
                            acc = 0.0
                        a_out[o] = acc
                fan_in = width
            # loss and output delta
            loss = 0.0
            scale = 2.0 / (bs * out_dim)
            for k in range(bs):
                row = order[r + k]
                a_out = act + k * total_act + total_act - out_dim
                for o in range(out_dim):
                    diff = a_out[o] - Y[row, o]
                    loss = loss + diff * diff
                    delta[k * max_w + o] = scale * diff
            loss = loss / (bs * out_dim)
            if not isfinite(loss):
                status = 1
                break
            lv[bi - batch_start] = loss
            # backward
            memset(grad, 0, n_params * sizeof(double))
            for l in range(L - 1, -1, -1):
                width = <int>widths[l]
                fan_in = input_dim if l == 0 else <int>widths[l - 1]
                W = &flat[0] + w_off[l]
                for k in range(bs):
                    a_in = act + k * total_act + a_off[l]
                    for o in range(width):
                        g = delta[k * max_w + o]
                        for i in range(fan_in):
                            grad[w_off[l] + o * fan_in + i] += g * a_in[i]
                        grad[w_off[l] + width * fan_in + o] += g
                if l > 0:
                    for k in range(bs):
                        a_in = act + k * total_act + a_off[l]
                        for i in range(fan_in):
                            acc = 0.0
                            for o in range(width):
                                acc = acc + delta[k * max_w + o] * W[o * fan_in + i]
                            if acts[l - 1] == 1 and not (a_in[i] > 0.0):
                                acc = 0.0
                            delta_prev[k * max_w + i] = acc
                    swap = delta
                    delta = delta_prev
                    delta_prev = swap
            for j in range(n_params):
                grad[j] = grad[j] * grad_mask[j]
                if not isfinite(grad[j]):
                    status = 1
            if status:
                break
            # Adam
            step += 1
            bc1 = 1.0 - pow(beta1, <double>step)
            bc2 = 1.0 - pow(beta2, <double>step)
            for j in range(n_params):
                g = grad[j]
                m[j] = beta1 * m[j] + (1.0 - beta1) * g
                v[j] = beta2 * v[j] + (1.0 - beta2) * (g * g)
                mh = m[j] / bc1
                vh = v[j] / bc2
                flat[j] = flat[j] - lr * mh / (sqrt(vh) + eps)
            n_done += 1

    free(w_off)
    free(a_off)
    free(act)
    free(delta)
    free(delta_prev)
    free(grad)
    return losses[:n_done], step, status


def dataset_mse(const double[::1] flat, int input_dim, const long[::1] widths,
                const long[::1] acts, const double[:, ::1] X, const double[:, ::1] Y):
    """Mean squared error of the network over every row of ``X``/``Y``."""
    cdef int L = <int>widths.shape[0]
    cdef int out_dim = <int>widths[L - 1]
    cdef int l, o, i, j, fan_in, width, max_w = input_dim
    cdef long n = X.shape[0], k, off
    cdef double acc, diff, total = 0.0
    for l in range(L):
        if widths[l] > max_w:
            max_w = <int>widths[l]
    cdef double* a = <double*>malloc(max_w * sizeof(double))
    cdef double* z = <double*>malloc(max_w * sizeof(double))
    cdef double* swap
    cdef const double* W
    with nogil:
        for k in range(n):
            for j in range(input_dim):
                a[j] = X[k, j]
            fan_in = input_dim
            off = 0
            for l in range(L):
                width = <int>widths[l]
                W = &flat[0] + off
                for o in range(width):
                    acc = 0.0
                    for i in range(fan_in):
                        acc = acc + W[o * fan_in + i] * a[i]
                    acc = acc + W[width * fan_in + o]
                    if acts[l] == 1 and not (acc > 0.0):
                        acc = 0.0
                    z[o] = acc
                off += width * fan_in + width
                swap = a
                a = z
                z = swap
                fan_in = width
            for o in range(out_dim):
                diff = a[o] - Y[k, o]
                total = total + diff * diff
    free(a)
    free(z)
    return total / (n * out_dim)
