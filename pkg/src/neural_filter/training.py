"""One-step flow datasets and mini-batch Adam training."""

import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from neural_filter import dynamics
from neural_filter._backend import kernels
from neural_filter._pykernels import adam_update
from neural_filter.errors import (
    IntegrationError,
    InvalidArgumentError,
    TrainingDivergenceError,
)
from neural_filter.mlp import MlpModel, forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SampleBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=np.float64).reshape(-1)
        hi = np.array(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise InvalidArgumentError("lower and upper bounds differ in length")
        if not np.all(lo < hi):
            raise InvalidArgumentError(f"need lower < upper elementwise, got {lo} / {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    @property
    def dim(self):
        return self.lower.shape[0]


def _frozen(a):
    a = np.array(a, dtype=np.float64, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of ``inputs`` are x(0); rows of ``targets`` the state one
    sampling interval ``ts`` later. Arrays are read-only."""

    inputs: np.ndarray
    targets: np.ndarray
    ts: float

    def __post_init__(self):
        x = _frozen(self.inputs)
        y = _frozen(self.targets)
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise InvalidArgumentError(f"inputs {x.shape} and targets {y.shape} must be paired 2-D arrays")
        if not self.ts > 0:
            raise InvalidArgumentError("ts must be positive")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.targets[idx], self.ts)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    split_fraction: float = 0.8
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    validation_every: int = 30
    normalize: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be positive")
        if not 0.0 < self.split_fraction < 1.0:
            raise InvalidArgumentError("split_fraction must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        # beta = 0 is allowed so the optimizer can degenerate to sign descent.
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1)")
        if self.adam_eps < 0:
            raise InvalidArgumentError("adam_eps must be non-negative")
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must be non-negative")
        if self.validation_every < 1:
            raise InvalidArgumentError("validation_every must be positive")


@dataclass
class LossTrace:
    iterations: List[int] = field(default_factory=list)
    train_losses: List[float] = field(default_factory=list)
    val_iterations: List[int] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)
    final_train_loss: float = float("nan")
    final_val_loss: float = float("nan")

    def __len__(self):
        return len(self.iterations)


def smooth(values, window=25):
    """Trailing moving average; the first entries average what is available."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    csum = np.cumsum(np.concatenate([[0.0], values]))
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def generate_dataset(system, box, n_samples, ts, cfg=None, seed=0):
    """Uniform samples of x(0) from ``box`` paired with their flow over ``ts``."""
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be >= 1")
    if box.dim != system.dim:
        raise InvalidArgumentError(f"box has {box.dim} dims, system '{system.name}' has {system.dim}")
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(box.lower, box.upper, size=(n_samples, system.dim))
    try:
        x1 = dynamics.integrate_many(system, x0, ts, cfg)
    except IntegrationError as exc:
        i = exc.sample_index
        raise type(exc)(f"dataset sample {i} (x0={x0[i].tolist()}): {exc}", sample_index=i) from exc
    return Dataset(x0, x1, ts)


def split_dataset(d, fraction, seed=0):
    """Seeded shuffle, then the first floor(n*fraction) rows vs. the rest."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError("fraction must lie in (0, 1)")
    n = len(d)
    n_first = int(math.floor(n * fraction))
    if n_first == 0 or n_first == n:
        raise InvalidArgumentError(f"split of {n} rows at {fraction} leaves an empty partition")
    perm = np.random.default_rng(seed).permutation(n)
    return d.subset(np.sort(perm[:n_first])), d.subset(np.sort(perm[n_first:]))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros_like(cls, params):
        return cls(np.zeros_like(params, dtype=np.float64), np.zeros_like(params, dtype=np.float64))


def adam_step(params, grads, state, t, cfg):
    """One Adam update at 1-based step ``t``. Returns new params and moments;
    the inputs are left untouched."""
    params = np.array(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape or state.v.shape != params.shape:
        raise InvalidArgumentError("params, grads and moments must share one shape")
    if t < 1:
        raise InvalidArgumentError("step index t must be >= 1")
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergenceError("non-finite gradient")
    new = AdamState(state.m.copy(), state.v.copy())
    adam_update(params, grads, new.m, new.v, t, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    return params, new


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-column affine maps ``(x - mean) / scale`` for inputs and targets.

    ``fold`` turns a network acting on standardized data into the equivalent
    network on raw data by rewriting its first and last layers; ``unfold``
    is the inverse. Hidden layers are untouched.
    """

    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: np.ndarray
    out_scale: np.ndarray

    @classmethod
    def from_dataset(cls, d):
        def scale(a):
            s = a.std(axis=0)
            return np.where(s > 0.0, s, 1.0)

        return cls(d.inputs.mean(axis=0), scale(d.inputs), d.targets.mean(axis=0), scale(d.targets))

    def apply(self, d):
        return Dataset(
            (d.inputs - self.in_mean) / self.in_scale, (d.targets - self.out_mean) / self.out_scale, d.ts
        )

    def fold(self, model):
        W, b = list(model.weights), list(model.biases)
        b[0] = b[0] - W[0] @ (self.in_mean / self.in_scale)
        W[0] = W[0] / self.in_scale
        W[-1] = self.out_scale[:, None] * W[-1]
        b[-1] = self.out_scale * b[-1] + self.out_mean
        return _rebuild(model, W, b)

    def unfold(self, model):
        W, b = list(model.weights), list(model.biases)
        W[-1] = W[-1] / self.out_scale[:, None]
        b[-1] = (b[-1] - self.out_mean) / self.out_scale
        W[0] = W[0] * self.in_scale
        b[0] = b[0] + W[0] @ (self.in_mean / self.in_scale)
        return _rebuild(model, W, b)


def _rebuild(model, weights, biases):
    if not model.use_bias:
        raise InvalidArgumentError("normalization needs a model with biases")
    return MlpModel(model.input_dim, model.layers, tuple(weights), tuple(biases), model.use_bias)


def mse(model, d):
    diff = forward(model, d.inputs) - d.targets
    return float(np.mean(diff * diff))


def _check_dims(model, d):
    if d.inputs.shape[1] != model.input_dim or d.targets.shape[1] != model.output_dim:
        raise InvalidArgumentError(
            f"dataset {d.inputs.shape[1]}->{d.targets.shape[1]} does not match "
            f"model {model.input_dim}->{model.output_dim}"
        )


def train(model, d, cfg, validation=None):
    """Mini-batch Adam on mean squared error.

    Without ``validation`` the dataset is split by ``cfg.split_fraction``.
    The training loss of every iteration is recorded; the validation loss
    after every ``cfg.validation_every`` iterations.

    With ``cfg.normalize`` the optimizer works on standardized data (statistics
    of the training partition) and the recorded losses are in standardized
    units; the returned model and the final losses are in raw units.
    """
    if cfg.epochs == 0:
        return model, LossTrace()
    if validation is None:
        d, validation = split_dataset(d, cfg.split_fraction, cfg.seed)
    _check_dims(model, d)
    _check_dims(model, validation)
    raw_train, raw_val = d, validation
    stats = None
    if cfg.normalize:
        stats = Standardizer.from_dataset(d)
        model = stats.unfold(model)
        d, validation = stats.apply(d), stats.apply(validation)

    flat = model.flat_params().copy()
    mask = model.bias_mask()
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    step = 0
    widths = model.widths
    acts = model.activation_codes
    X = np.ascontiguousarray(d.inputs)
    Y = np.ascontiguousarray(d.targets)
    VX = np.ascontiguousarray(validation.inputs)
    VY = np.ascontiguousarray(validation.targets)
    n = len(d)
    n_batches = -(-n // cfg.batch_size)
    every = cfg.validation_every
    rng = np.random.default_rng([cfg.seed, 1])
    trace = LossTrace()

    for epoch in range(cfg.epochs):
        order = rng.permutation(n).astype(np.int64)
        b = 0
        while b < n_batches:
            stop = min(n_batches, b + every - step % every)
            losses, step, status = kernels.run_batches(
                flat, m, v, step, model.input_dim, widths, acts, X, Y, order,
                b, stop, cfg.batch_size,
                cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, mask,
            )
            first = len(trace.iterations) + 1
            trace.iterations.extend(range(first, first + len(losses)))
            trace.train_losses.extend(float(x) for x in losses)
            if status:
                raise TrainingDivergenceError(
                    f"non-finite loss or gradient at iteration {step + 1} (epoch {epoch})", trace
                )
            if step % every == 0:
                val = kernels.dataset_mse(flat, model.input_dim, widths, acts, VX, VY)
                if not np.isfinite(val):
                    raise TrainingDivergenceError(f"non-finite validation loss at iteration {step}", trace)
                trace.val_iterations.append(step)
                trace.val_losses.append(val)
            b = stop
        log.debug("epoch %d: last batch loss %.3e", epoch, trace.train_losses[-1])

    trained = model.with_flat_params(flat)
    if stats is not None:
        trained = stats.fold(trained)
    trace.final_train_loss = mse(trained, raw_train)
    trace.final_val_loss = mse(trained, raw_val)
    return trained, trace
