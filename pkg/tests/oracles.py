"""Reference implementations that share no code with the package.

Each is written from the textbook formula in plain loops so a bug in the
package cannot be mirrored here.
"""

import numpy as np


def pendulum_f(x, g=9.81, length=1.0):
    return np.array([x[1], -(g / length) * np.sin(x[0])])


def van_der_pol_f(x, mu=1.0):
    return np.array([x[1], mu * (1.0 - x[0] ** 2) * x[1] - x[0]])


def lorenz_f(x, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    return np.array([sigma * (x[1] - x[0]), x[0] * (rho - x[2]) - x[1], x[0] * x[1] - beta * x[2]])


def double_pendulum_f(x, m1=1.0, m2=1.0, l1=1.0, l2=1.0, g=9.81):
    """Lagrangian equations solved with a generic linear solve."""
    th1, w1, th2, w2 = x
    d = th1 - th2
    mass = np.array(
        [
            [(m1 + m2) * l1, m2 * l2 * np.cos(d)],
            [l1 * np.cos(d), l2],
        ]
    )
    rhs = np.array(
        [
            -m2 * l2 * w2**2 * np.sin(d) - (m1 + m2) * g * np.sin(th1),
            l1 * w1**2 * np.sin(d) - g * np.sin(th2),
        ]
    )
    a1, a2 = np.linalg.solve(mass, rhs)
    return np.array([w1, a1, w2, a2])


ORACLE_RHS = {
    "pendulum": pendulum_f,
    "van_der_pol": van_der_pol_f,
    "lorenz": lorenz_f,
    "double_pendulum": double_pendulum_f,
}


def rk4(f, x0, t_span, dt=1e-5):
    """Classical fixed-step RK4; the step is shrunk so it divides t_span."""
    n = max(1, int(np.ceil(t_span / dt - 1e-9)))
    h = t_span / n
    x = np.array(x0, dtype=float)
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def kalman_filter(F, H, Q, R, x0, P0, ys):
    """Textbook linear Kalman filter with explicit inverse. Step 0 returns the
    initial condition; step k >= 1 predicts and then corrects with ys[k]."""
    n = len(x0)
    x = np.array(x0, dtype=float)
    P = np.array(P0, dtype=float)
    xs, Ps, priors = [x.copy()], [P.copy()], [x.copy()]
    for k in range(1, len(ys)):
        x_pred = F @ x
        P_pred = F @ P @ F.T + Q
        S = H @ P_pred @ H.T + R
        K = P_pred @ H.T @ np.linalg.inv(S)
        x = x_pred + K @ (ys[k] - H @ x_pred)
        P = (np.eye(n) - K @ H) @ P_pred
        P = 0.5 * (P + P.T)
        priors.append(x_pred)
        xs.append(x.copy())
        Ps.append(P.copy())
    return np.array(priors), np.array(xs), np.array(Ps)


def central_difference_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=1)


def jacobian_rel_error(analytic, numeric):
    """Largest absolute deviation relative to the largest Jacobian entry."""
    scale = max(np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)
