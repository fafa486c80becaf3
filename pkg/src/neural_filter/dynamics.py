"""Benchmark vector fields, one-interval integration, and noisy truth simulation."""

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from neural_filter import _ode
from neural_filter._backend import kernels
from neural_filter.errors import (
    DivergenceError,
    IntegrationError,
    InvalidArgumentError,
    InvalidStateError,
)

_POSITIVE_PARAMS = {"length", "m1", "m2", "l1", "l2"}


@dataclass(frozen=True)
class OdeSystem:
    """Continuous-time vector field ``dx/dt = rhs(x, u, params)``.

    ``rhs`` is vectorized over rows: it receives an ``(n, dim)`` array, the
    control vector and the parameter values as a tuple (in ``params`` order).
    ``code`` is non-zero for the built-in systems that the compiled kernel
    knows how to evaluate.
    """

    name: str
    dim: int
    params: Mapping[str, float]
    rhs: Callable = field(repr=False, compare=False)
    input_dim: int = 0
    code: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidArgumentError(f"system dimension must be positive, got {self.dim}")
        for key, value in self.params.items():
            if not np.isfinite(value):
                raise InvalidArgumentError(f"parameter {key}={value} is not finite")
            if key in _POSITIVE_PARAMS and value <= 0:
                raise InvalidArgumentError(f"parameter {key} must be positive, got {value}")

    @property
    def param_values(self):
        return tuple(float(v) for v in self.params.values())


def pendulum(g=9.81, length=1.0):
    return OdeSystem("pendulum", 2, {"g": g, "length": length}, _ode.pendulum_rhs, code=_ode.PENDULUM)


def van_der_pol(mu=1.0):
    return OdeSystem("van_der_pol", 2, {"mu": mu}, _ode.van_der_pol_rhs, code=_ode.VAN_DER_POL)


def lorenz(sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    return OdeSystem(
        "lorenz", 3, {"sigma": sigma, "rho": rho, "beta": beta}, _ode.lorenz_rhs, code=_ode.LORENZ
    )


def double_pendulum(m1=1.0, m2=1.0, l1=1.0, l2=1.0, g=9.81):
    return OdeSystem(
        "double_pendulum",
        4,
        {"m1": m1, "m2": m2, "l1": l1, "l2": l2, "g": g},
        _ode.double_pendulum_rhs,
        code=_ode.DOUBLE_PENDULUM,
    )


SYSTEMS = {
    "pendulum": pendulum,
    "van_der_pol": van_der_pol,
    "lorenz": lorenz,
    "double_pendulum": double_pendulum,
}


def make_system(name, **params):
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown system '{name}'") from None
    return factory(**params)


def pendulum_energy(x, g=9.81, length=1.0):
    """Energy per unit mass of the simple pendulum."""
    x = np.asarray(x, dtype=float)
    return 0.5 * length**2 * x[..., 1] ** 2 - g * length * np.cos(x[..., 0])


def double_pendulum_energy(x, m1=1.0, m2=1.0, l1=1.0, l2=1.0, g=9.81):
    x = np.asarray(x, dtype=float)
    th1, w1, th2, w2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    kinetic = (
        0.5 * (m1 + m2) * l1**2 * w1**2
        + 0.5 * m2 * l2**2 * w2**2
        + m2 * l1 * l2 * w1 * w2 * np.cos(th1 - th2)
    )
    potential = -(m1 + m2) * g * l1 * np.cos(th1) - m2 * g * l2 * np.cos(th2)
    return kinetic + potential


def as_state(x, dim):
    x = np.array(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != dim:
        raise InvalidStateError(f"state has length {x.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidStateError(f"state has non-finite entries: {x}")
    return x


def _as_control(system, u):
    u = np.asarray(() if u is None else u, dtype=np.float64).reshape(-1)
    if u.shape[0] != system.input_dim:
        raise InvalidArgumentError(
            f"control has length {u.shape[0]}, system '{system.name}' expects {system.input_dim}"
        )
    return u


def eval_rhs(system, x, u=()):
    """Time derivative of a single state."""
    x = as_state(x, system.dim)
    u = _as_control(system, u)
    return system.rhs(x[None, :], u, system.param_values)[0]


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-9
    max_steps: int = 1_000_000
    initial_step: Optional[float] = None  # None means t_span / 100

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise InvalidArgumentError(f"{name} must lie in (0, 1), got {value}")
        if self.max_steps < 1:
            raise InvalidArgumentError("max_steps must be >= 1")
        if self.initial_step is not None and not self.initial_step > 0:
            raise InvalidArgumentError("initial_step must be positive")


def integrate_many(system, x0, t_span, cfg=None, u=()):
    """Integrate every row of ``x0`` over ``[0, t_span]`` with u held constant.

    Built-in autonomous systems run through the selected kernel backend.
    """
    cfg = cfg or IntegratorConfig()
    if not t_span > 0:
        raise InvalidArgumentError(f"t_span must be positive, got {t_span}")
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[1] != system.dim:
        raise InvalidStateError(f"expected an (n, {system.dim}) array, got {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise InvalidStateError("initial states contain non-finite entries")
    u = _as_control(system, u)
    h0 = cfg.initial_step if cfg.initial_step is not None else t_span / 100.0

    if system.code and u.size == 0:
        out, status, bad = kernels.integrate_batch(
            system.code,
            np.asarray(system.param_values, dtype=np.float64),
            x0,
            float(t_span),
            cfg.rel_tol,
            cfg.abs_tol,
            h0,
            cfg.max_steps,
        )
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            out, status, bad = _ode.dopri5(
                system.rhs,
                system.param_values,
                x0,
                t_span,
                u=u,
                rtol=cfg.rel_tol,
                atol=cfg.abs_tol,
                h0=h0,
                max_steps=cfg.max_steps,
            )
    if status == _ode.MAX_STEPS_EXCEEDED:
        raise IntegrationError(
            f"{system.name}: exceeded {cfg.max_steps} steps on sample {bad}", sample_index=bad
        )
    if status == _ode.NON_FINITE:
        raise DivergenceError(f"{system.name}: non-finite state on sample {bad}", sample_index=bad)
    return out


def integrate_interval(system, x0, t_span, cfg=None, u=()):
    """State after ``t_span`` time units starting from ``x0``."""
    x0 = as_state(x0, system.dim)
    return integrate_many(system, x0[None, :], t_span, cfg, u)[0]


@dataclass(frozen=True)
class MeasurementModel:
    """Linear output map ``y = C x + v`` with ``v ~ N(0, sigma_v^2 I)``."""

    c_matrix: np.ndarray
    sigma_v: float = 0.0

    def __post_init__(self):
        c = np.atleast_2d(np.array(self.c_matrix, dtype=np.float64))
        c.setflags(write=False)
        object.__setattr__(self, "c_matrix", c)
        if not np.isfinite(self.sigma_v) or self.sigma_v < 0:
            raise InvalidArgumentError(f"sigma_v must be finite and >= 0, got {self.sigma_v}")
        if not np.all(np.isfinite(c)):
            raise InvalidArgumentError("c_matrix has non-finite entries")

    @property
    def meas_dim(self):
        return self.c_matrix.shape[0]

    @property
    def state_dim(self):
        return self.c_matrix.shape[1]

    @property
    def r_matrix(self):
        return self.sigma_v**2 * np.eye(self.meas_dim)

    def output(self, x):
        return self.c_matrix @ x

    def jacobian(self, x):
        # Nonlinear output maps would override this; every shipped model is linear.
        return self.c_matrix


def measure(model, x, noise):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    noise = np.asarray(noise, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.state_dim:
        raise InvalidArgumentError(f"state length {x.shape[0]} != {model.state_dim}")
    if noise.shape[0] != model.meas_dim:
        raise InvalidArgumentError(f"noise length {noise.shape[0]} != {model.meas_dim}")
    return model.output(x) + noise


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    true_states: Optional[np.ndarray]  # (N, n); None when only measurements are known
    measurements: np.ndarray  # (N, m)

    def __post_init__(self):
        n = len(self.times)
        states_ok = self.true_states is None or len(self.true_states) == n
        if not states_ok or len(self.measurements) != n:
            raise InvalidArgumentError("times, states and measurements must have equal length")
        if n > 1:
            dt = np.diff(self.times)
            if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
                raise InvalidArgumentError("times must be strictly increasing and uniformly spaced")

    def __len__(self):
        return len(self.times)

    @property
    def ts(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else float("nan")


def simulate_truth(system, model, x0, steps, ts, cfg=None, seed=0, u=()):
    """Noise-free state sequence and noisy measurements, ``steps`` samples long."""
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    if not ts > 0:
        raise InvalidArgumentError("ts must be positive")
    if model.state_dim != system.dim:
        raise InvalidArgumentError("measurement model does not match system dimension")
    x = as_state(x0, system.dim)
    states = np.empty((steps, system.dim))
    states[0] = x
    for k in range(1, steps):
        x = integrate_interval(system, x, ts, cfg, u)
        states[k] = x

    rng = np.random.default_rng(seed)
    if model.sigma_v > 0:
        noise = rng.normal(0.0, model.sigma_v, size=(steps, model.meas_dim))
    else:
        noise = np.zeros((steps, model.meas_dim))
    ys = np.stack([measure(model, states[k], noise[k]) for k in range(steps)])
    times = ts * np.arange(steps)
    return Trajectory(times, states, ys)
