"""End-to-end case-study pipeline and run summaries.

A run directory holds ``config.ini`` (the resolved configuration),
``model.nfm``, ``loss.csv`` / ``loss_smoothed.csv``, ``truth.csv``,
``filter.csv``, ``open_loop.csv`` and ``summary.json``. A stage failure
leaves whatever was already written plus a ``.failed`` marker.
"""

import json
import math
import os
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from neural_filter._backend import BACKEND
from neural_filter.dynamics import simulate_truth
from neural_filter.errors import (
    InvalidArgumentError,
    InvalidComparisonError,
    NeuralFilterError,
    OutputError,
    StageError,
)
from neural_filter.experiments import csvio
from neural_filter.filter import FilterRecord, open_loop_rollout, run_filter
from neural_filter.mlp import init_model, save_model
from neural_filter.training import LossTrace, Standardizer, generate_dataset, split_dataset, train

OUTPUT_ROOT_ENV = "NEURAL_FILTER_OUTPUT_ROOT"
FAILED_MARKER = ".failed"
SMOOTHING_WINDOW = 25


def default_output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def final_quarter_mean(values):
    """Mean over the last quarter of the samples (at least one sample)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float("nan")
    start = values.size - max(1, values.size // 4)
    return float(values[start:].mean())


@dataclass
class RunSummary:
    """Headline numbers of one run. Filter fields are ``None`` for a
    training-only run and training fields are ``None`` for a filter-only
    run. Open-loop fields are infinite when ``open_loop_divergence_step``
    is set."""

    name: str
    system: str
    horizon_steps: int
    n_samples: Optional[int] = None
    backend: str = BACKEND
    filter_err_final_quarter: Optional[float] = None
    open_loop_err_final_quarter: Optional[float] = None
    max_trace_filter: Optional[float] = None
    final_trace_open_loop: Optional[float] = None
    open_loop_divergence_step: Optional[int] = None
    final_train_loss: Optional[float] = None
    final_val_loss: Optional[float] = None
    wall_clock_s: float = 0.0

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def load(cls, path):
        try:
            return cls.from_json(Path(path).read_text())
        except (OSError, ValueError, TypeError) as exc:
            raise InvalidComparisonError(f"cannot read run summary {path}: {exc}") from exc

    def save(self, path):
        path = Path(path)
        try:
            path.write_text(self.to_json())
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


@dataclass
class CaseStudyResult:
    summary: RunSummary
    model: object = None
    trace: Optional[LossTrace] = None
    truth: object = None
    filter_record: Optional[FilterRecord] = None
    open_loop_record: Optional[FilterRecord] = None


class _Stages:
    """Runs named stages; a failure drops a marker file and raises StageError."""

    def __init__(self, out_dir):
        self.out_dir = out_dir

    def __call__(self, name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (NeuralFilterError, OSError, FloatingPointError) as exc:
            if self.out_dir is not None:
                try:
                    (self.out_dir / FAILED_MARKER).write_text(f"{name}: {exc}\n")
                except OSError:
                    pass
            raise StageError(name, exc) from exc


def _prepare_dir(out_dir):
    if out_dir is None:
        return None
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        marker = out_dir / FAILED_MARKER
        if marker.exists():
            marker.unlink()
    except OSError as exc:
        raise StageError("prepare", OutputError(f"cannot use output directory {out_dir}: {exc}")) from exc
    return out_dir


def _write_config(cfg, out_dir):
    path = out_dir / "config.ini"
    try:
        path.write_text(cfg.to_ini())
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _train_stages(cfg, stage):
    system = cfg.system()
    data = stage("generate", generate_dataset, system, cfg.box, cfg.n_samples, cfg.ts, cfg.integrator, cfg.data_seed)
    train_part, val_part = stage("split", split_dataset, data, cfg.train.split_fraction, cfg.train.seed)

    def fit():
        model = init_model(system.dim, cfg.layers, seed=cfg.init_seed, use_bias=cfg.use_bias)
        if cfg.train.normalize:
            # Start from the seeded initialization expressed in standardized coordinates.
            model = Standardizer.from_dataset(train_part).fold(model)
        return train(model, train_part, cfg.train, validation=val_part)

    return stage("train", fit)


def _filter_stages(cfg, model, stage, summary):
    system = cfg.system()
    truth = stage(
        "simulate", simulate_truth, system, cfg.measurement, cfg.x0_true, cfg.horizon_steps, cfg.ts,
        cfg.integrator, cfg.noise_seed,
    )
    fcfg = cfg.filter_config()
    open_loop = stage("open_loop", open_loop_rollout, model, cfg.x0_true, cfg.horizon_steps, fcfg, truth)
    record = stage("filter", run_filter, model, truth, fcfg)

    summary.filter_err_final_quarter = final_quarter_mean(record.error_norms)
    summary.max_trace_filter = float(np.max(record.traces))
    if open_loop.divergence_step is None:
        summary.open_loop_err_final_quarter = final_quarter_mean(open_loop.error_norms)
        summary.final_trace_open_loop = float(open_loop.traces[-1])
    else:
        summary.open_loop_divergence_step = open_loop.divergence_step
        summary.open_loop_err_final_quarter = math.inf
        summary.final_trace_open_loop = math.inf
    return truth, record, open_loop


def _emit_training(out_dir, model, trace, stage):
    stage("emit", save_model, model, out_dir / "model.nfm")
    stage("emit", csvio.emit_csv, trace, out_dir / "loss.csv")
    stage("emit", csvio.emit_csv, trace, out_dir / "loss_smoothed.csv", window=SMOOTHING_WINDOW)


def _emit_filtering(out_dir, truth, record, open_loop, stage):
    stage("emit", csvio.emit_csv, truth, out_dir / "truth.csv")
    stage("emit", csvio.emit_csv, record, out_dir / "filter.csv", traj=truth)
    stage("emit", csvio.emit_csv, open_loop, out_dir / "open_loop.csv", traj=truth)


def _new_summary(cfg, with_training):
    return RunSummary(
        name=cfg.name,
        system=cfg.system_name,
        horizon_steps=cfg.horizon_steps,
        n_samples=cfg.n_samples if with_training else None,
    )


def run_pipeline(cfg, out_dir=None, train_only=False, model=None):
    """Run the configured stages and return every intermediate result.

    With ``model`` given, data generation and training are skipped. With
    ``train_only`` the truth simulation and estimation stages are skipped.
    ``out_dir=None`` keeps everything in memory.
    """
    start = time.perf_counter()
    out_dir = _prepare_dir(out_dir)
    stage = _Stages(out_dir)
    if out_dir is not None:
        stage("emit", _write_config, cfg, out_dir)
    summary = _new_summary(cfg, with_training=model is None)
    result = CaseStudyResult(summary)

    if model is None:
        model, trace = _train_stages(cfg, stage)
        summary.final_train_loss = trace.final_train_loss
        summary.final_val_loss = trace.final_val_loss
        result.trace = trace
        if out_dir is not None:
            _emit_training(out_dir, model, trace, stage)
    else:
        if model.input_dim != cfg.dim or model.output_dim != cfg.dim:
            stage("load", _raise_dim_mismatch, model, cfg)
        if out_dir is not None:
            stage("emit", save_model, model, out_dir / "model.nfm")
    result.model = model

    if not train_only:
        truth, record, open_loop = _filter_stages(cfg, model, stage, summary)
        result.truth, result.filter_record, result.open_loop_record = truth, record, open_loop
        if out_dir is not None:
            _emit_filtering(out_dir, truth, record, open_loop, stage)

    summary.wall_clock_s = time.perf_counter() - start
    if out_dir is not None:
        stage("emit", summary.save, out_dir / "summary.json")
    return result


def _raise_dim_mismatch(model, cfg):
    raise InvalidArgumentError(
        f"model maps {model.input_dim}->{model.output_dim}, system '{cfg.system_name}' has dimension {cfg.dim}"
    )


def run_case_study(cfg, out_dir=None):
    return run_pipeline(cfg, out_dir).summary


_COMPARED = (
    "filter_err_final_quarter",
    "open_loop_err_final_quarter",
    "max_trace_filter",
    "final_trace_open_loop",
)


def _ratio(a, b):
    if a == b:
        return 1.0
    if a == 0.0:
        return math.inf
    return b / a


def compare_runs(a, b):
    """Rows ``(metric, value_a, value_b, value_b / value_a)``, in a fixed order."""
    if a.system != b.system:
        raise InvalidComparisonError(f"cannot compare a '{a.system}' run with a '{b.system}' run")
    if a.horizon_steps != b.horizon_steps:
        raise InvalidComparisonError(f"horizons differ: {a.horizon_steps} vs {b.horizon_steps} steps")
    rows = []
    for key in _COMPARED:
        va, vb = getattr(a, key), getattr(b, key)
        if va is None or vb is None:
            raise InvalidComparisonError(f"'{key}' is missing from a summary (training-only run?)")
        rows.append((key, float(va), float(vb), _ratio(float(va), float(vb))))
    return rows


def format_report(rows, label_a="a", label_b="b"):
    width = max(len(r[0]) for r in rows)
    lines = [f"{'metric':<{width}}  {label_a:>14}  {label_b:>14}  {'ratio b/a':>12}"]
    for key, va, vb, ratio in rows:
        lines.append(f"{key:<{width}}  {va:>14.6g}  {vb:>14.6g}  {ratio:>12.6g}")
    return "\n".join(lines)
