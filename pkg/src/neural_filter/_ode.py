"""Vectorized vector fields and a row-wise adaptive Dormand-Prince integrator.

Everything here works on arrays of shape ``(n, dim)`` so that a whole batch
of initial conditions can be advanced at once. Each row keeps its own step
size, so the result for a row does not depend on what else is in the batch.
"""

import numpy as np

# Codes shared with the compiled kernel.
PENDULUM = 1
VAN_DER_POL = 2
LORENZ = 3
DOUBLE_PENDULUM = 4

DET_TOL = 1e-12

# Dormand-Prince 5(4) tableau.
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# difference between the 5th order and embedded 4th order weights
E1, E3, E4, E5, E6, E7 = (
    71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40,
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0

OK, MAX_STEPS_EXCEEDED, NON_FINITE = 0, 1, 2


def pendulum_rhs(x, u, p):
    g, length = p
    out = np.empty_like(x)
    out[:, 0] = x[:, 1]
    out[:, 1] = -(g / length) * np.sin(x[:, 0])
    return out


def van_der_pol_rhs(x, u, p):
    (mu,) = p
    out = np.empty_like(x)
    out[:, 0] = x[:, 1]
    out[:, 1] = mu * (1.0 - x[:, 0] * x[:, 0]) * x[:, 1] - x[:, 0]
    return out


def lorenz_rhs(x, u, p):
    sigma, rho, beta = p
    out = np.empty_like(x)
    out[:, 0] = sigma * (x[:, 1] - x[:, 0])
    out[:, 1] = x[:, 0] * (rho - x[:, 2]) - x[:, 1]
    out[:, 2] = x[:, 0] * x[:, 1] - beta * x[:, 2]
    return out


def double_pendulum_rhs(x, u, p):
    """State is ``[theta1, theta1_dot, theta2, theta2_dot]``; ``u`` is the
    torque on the first link (empty means zero)."""
    m1, m2, l1, l2, g = p
    th1, w1, th2, w2 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    phi = th2 - th1
    cphi = np.cos(phi)
    sphi = np.sin(phi)
    tau = 0.0 if u is None or len(u) == 0 else u[0]

    m11 = (m1 + m2) * l1 * l1
    m12 = m2 * l1 * l2 * cphi
    m21 = l1 * cphi
    m22 = l2
    d1 = -m2 * l1 * l2 * sphi * w2 * w2 + (m1 + m2) * g * l1 * np.sin(th1)
    d2 = l1 * sphi * w1 * w1 + g * np.sin(th2)
    r1 = tau - d1
    r2 = -d2

    det = m11 * m22 - m12 * m21
    if np.any(np.abs(det) < DET_TOL):
        from neural_filter.errors import DegenerateConfigurationError

        raise DegenerateConfigurationError(f"singular mass matrix, det={np.min(np.abs(det)):.3e}")
    out = np.empty_like(x)
    out[:, 0] = w1
    out[:, 1] = (m22 * r1 - m12 * r2) / det
    out[:, 2] = w2
    out[:, 3] = (m11 * r2 - m21 * r1) / det
    return out


RHS_BY_CODE = {
    PENDULUM: pendulum_rhs,
    VAN_DER_POL: van_der_pol_rhs,
    LORENZ: lorenz_rhs,
    DOUBLE_PENDULUM: double_pendulum_rhs,
}


def dopri5(rhs, params, x0, t_span, u=None, rtol=1e-9, atol=1e-9, h0=None, max_steps=1_000_000):
    """Advance every row of ``x0`` from 0 to ``t_span``.

    Returns ``(x, status, bad_row)``. ``status`` is ``OK`` or one of the
    failure codes, ``bad_row`` the first offending row (-1 on success).
    """
    y = np.array(x0, dtype=np.float64, copy=True)
    n = y.shape[0]
    if h0 is None:
        h0 = t_span / 100.0
    t = np.zeros(n)
    h = np.full(n, min(h0, t_span))
    steps = np.zeros(n, dtype=np.int64)
    active = np.arange(n)

    while active.size:
        ya = y[active]
        ta = t[active]
        ha = h[active]
        remaining = t_span - ta
        last = ha >= remaining
        ha = np.where(last, remaining, ha)
        hc = ha[:, None]

        k1 = rhs(ya, u, params)
        k2 = rhs(ya + hc * (A21 * k1), u, params)
        k3 = rhs(ya + hc * (A31 * k1 + A32 * k2), u, params)
        k4 = rhs(ya + hc * (A41 * k1 + A42 * k2 + A43 * k3), u, params)
        k5 = rhs(ya + hc * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4), u, params)
        k6 = rhs(ya + hc * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5), u, params)
        ynew = ya + hc * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        k7 = rhs(ynew, u, params)
        err = hc * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)

        scale = atol + rtol * np.maximum(np.abs(ya), np.abs(ynew))
        err_norm = np.sqrt(np.mean((err / scale) ** 2, axis=1))

        bad = ~np.isfinite(ynew).all(axis=1) | ~np.isfinite(err_norm)
        if bad.any():
            return y, NON_FINITE, int(active[np.argmax(bad)])

        accept = err_norm <= 1.0
        factor = np.clip(SAFETY * np.maximum(err_norm, 1e-300) ** -0.2, MIN_FACTOR, MAX_FACTOR)
        factor = np.where(accept, factor, np.minimum(factor, 1.0))

        acc_rows = active[accept]
        y[acc_rows] = ynew[accept]
        t[acc_rows] = np.where(last[accept], t_span, ta[accept] + ha[accept])
        h[active] = ha * factor
        steps[active] += 1

        done = accept & last
        over = steps[active] >= max_steps
        still = ~done
        if (over & still).any():
            return y, MAX_STEPS_EXCEEDED, int(active[np.argmax(over & still)])
        active = active[still]

    return y, OK, -1
