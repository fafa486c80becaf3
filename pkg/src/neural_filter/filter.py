"""EKF-style recursion around a trained network, plus the open-loop baseline.

The network's input Jacobian serves as the state-transition matrix when the
covariance is propagated. The measurement map is linear, so its Jacobian is
the constant ``C`` (evaluated at the prior estimate for generality).
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg

from neural_filter.dynamics import MeasurementModel
from neural_filter.errors import (
    FilterDivergenceError,
    InvalidArgumentError,
    NumericalFailureError,
)
from neural_filter.mlp import forward, jacobian_input

COND_LIMIT = 1e12


def symmetrize(p):
    return 0.5 * (p + p.T)


def _check_psd(name, m, dim):
    m = np.array(m, dtype=np.float64)
    if m.shape != (dim, dim):
        raise InvalidArgumentError(f"{name} must be {dim}x{dim}, got {m.shape}")
    if not np.allclose(m, m.T, atol=1e-10, rtol=0.0):
        raise InvalidArgumentError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(symmetrize(m)).min() < -1e-10:
        raise InvalidArgumentError(f"{name} is not positive semidefinite")
    return symmetrize(m)


@dataclass(frozen=True)
class FilterState:
    x_hat: np.ndarray
    p_matrix: np.ndarray
    step: int = 0


@dataclass(frozen=True, eq=False)
class FilterConfig:
    q_matrix: np.ndarray
    measurement: MeasurementModel
    p0: np.ndarray
    x0_hat: Optional[np.ndarray] = None  # zeros when omitted

    def __post_init__(self):
        n = self.measurement.state_dim
        object.__setattr__(self, "q_matrix", _check_psd("q_matrix", self.q_matrix, n))
        object.__setattr__(self, "p0", _check_psd("p0", self.p0, n))
        x0 = np.zeros(n) if self.x0_hat is None else np.array(self.x0_hat, dtype=np.float64).reshape(-1)
        if x0.shape != (n,) or not np.all(np.isfinite(x0)):
            raise InvalidArgumentError(f"x0_hat must be a finite vector of length {n}")
        object.__setattr__(self, "x0_hat", x0)

    @property
    def dim(self):
        return self.measurement.state_dim

    def initial_state(self):
        return FilterState(self.x0_hat.copy(), self.p0.copy(), 0)


@dataclass
class FilterRecord:
    """Per-step history. Row ``k`` describes step ``k``; row 0 is the
    initial condition (prior = posterior, zero gain)."""

    priors: List[np.ndarray] = field(default_factory=list)
    posteriors: List[np.ndarray] = field(default_factory=list)
    gains: List[np.ndarray] = field(default_factory=list)
    traces: List[float] = field(default_factory=list)
    error_norms: List[float] = field(default_factory=list)
    divergence_step: Optional[int] = None

    def __len__(self):
        return len(self.posteriors)

    def append(self, prior, posterior, gain, trace, error_norm=None):
        self.priors.append(prior)
        self.posteriors.append(posterior)
        self.gains.append(gain)
        self.traces.append(float(trace))
        if error_norm is not None:
            self.error_norms.append(float(error_norm))

    def as_arrays(self):
        return (
            np.array(self.priors),
            np.array(self.posteriors),
            np.array(self.traces),
            np.array(self.error_norms),
        )


def predict(model, state, cfg, u=()):
    """Network prediction of the next state and the propagated covariance
    ``A P A^T + Q`` with ``A`` the network's input Jacobian at the estimate."""
    if len(u):
        raise InvalidArgumentError("the shipped networks take no control input")
    with np.errstate(over="ignore", invalid="ignore"):
        x_prior = forward(model, state.x_hat)
        if not np.all(np.isfinite(x_prior)):
            raise FilterDivergenceError(f"non-finite network output at step {state.step}", step=state.step)
        A = jacobian_input(model, state.x_hat)
        p_prior = symmetrize(A @ state.p_matrix @ A.T + cfg.q_matrix)
    if not np.all(np.isfinite(p_prior)):
        raise FilterDivergenceError(f"non-finite prior covariance at step {state.step}", step=state.step)
    return x_prior, p_prior


def update(x_prior, p_prior, y, cfg, step=0):
    """Measurement correction. Returns ``(FilterState, gain)``."""
    meas = cfg.measurement
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != (meas.meas_dim,):
        raise InvalidArgumentError(f"measurement has length {y.shape[0]}, expected {meas.meas_dim}")
    C = meas.jacobian(x_prior)
    S = symmetrize(C @ p_prior @ C.T + meas.r_matrix)
    if np.linalg.cond(S) > COND_LIMIT:
        raise NumericalFailureError(f"innovation covariance is singular at step {step}", step=step)
    try:
        factor = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"innovation covariance not positive definite at step {step}", step=step) from exc
    # K = P C^T S^-1, obtained as (S^-1 C P)^T since P and S are symmetric
    K = scipy.linalg.cho_solve(factor, C @ p_prior).T
    x_post = x_prior + K @ (y - meas.output(x_prior))
    p_post = symmetrize((np.eye(p_prior.shape[0]) - K @ C) @ p_prior)
    return FilterState(x_post, p_post, step), K


def run_filter(model, traj, cfg):
    """Filter a whole trajectory, starting from ``cfg.x0_hat`` and ``cfg.p0``.

    Error norms are recorded against ``traj.true_states`` when present.
    """
    n_steps = len(traj)
    if n_steps < 1:
        raise InvalidArgumentError("empty trajectory")
    if model.input_dim != cfg.dim or model.output_dim != cfg.dim:
        raise InvalidArgumentError("model and filter dimensions differ")
    truth = traj.true_states
    record = FilterRecord()
    state = cfg.initial_state()
    zero_gain = np.zeros((cfg.dim, cfg.measurement.meas_dim))

    def err(k, x):
        return None if truth is None else np.linalg.norm(truth[k] - x)

    record.append(state.x_hat, state.x_hat, zero_gain, np.trace(state.p_matrix), err(0, state.x_hat))
    for k in range(1, n_steps):
        try:
            x_prior, p_prior = predict(model, state, cfg)
            state, K = update(x_prior, p_prior, traj.measurements[k], cfg, step=k)
        except (FilterDivergenceError, NumericalFailureError) as exc:
            exc.step = k
            raise
        record.append(x_prior, state.x_hat, K, np.trace(state.p_matrix), err(k, state.x_hat))
    return record


def open_loop_rollout(model, x0, steps, cfg, truth=None):
    """Iterate the network with no measurement feedback.

    The covariance follows ``P <- A P A^T + Q`` from ``cfg.p0``. A non-finite
    state stops the rollout; the partial record carries ``divergence_step``.
    """
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    x = np.array(x0, dtype=np.float64).reshape(-1)
    P = cfg.p0.copy()
    zero_gain = np.zeros((cfg.dim, cfg.measurement.meas_dim))
    record = FilterRecord()

    def err(k, x):
        return None if truth is None else np.linalg.norm(truth.true_states[k] - x)

    record.append(x, x, zero_gain, np.trace(P), err(0, x))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps):
            A = jacobian_input(model, x)
            x_next = forward(model, x)
            P = symmetrize(A @ P @ A.T + cfg.q_matrix)
            if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(P))):
                record.divergence_step = k
                break
            x = x_next
            record.append(x, x, zero_gain, np.trace(P), err(k, x))
    return record
