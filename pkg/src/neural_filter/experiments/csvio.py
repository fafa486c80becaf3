"""CSV artifacts: loss curves and filter/open-loop trajectories.

Values are written with 17 significant digits so they round-trip exactly;
lines end in ``\\n`` and a header is always present.
"""

import csv
from pathlib import Path

import numpy as np

from neural_filter.dynamics import Trajectory
from neural_filter.errors import InvalidArgumentError, OutputError
from neural_filter.filter import FilterRecord
from neural_filter.training import LossTrace, smooth


def fmt(x):
    return format(float(x), ".17g")


def _write(path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        tmp.replace(path)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def trajectory_header(n, m):
    return (
        ["k", "t"]
        + [f"x_true_{i}" for i in range(1, n + 1)]
        + [f"y_{i}" for i in range(1, m + 1)]
        + [f"xhat_prior_{i}" for i in range(1, n + 1)]
        + [f"xhat_post_{i}" for i in range(1, n + 1)]
        + ["err_norm", "trace_P"]
    )


def emit_record(record, traj, path):
    """One row per recorded step. A rollout that stopped early has fewer
    rows than ``traj``; columns that are unknown (no truth) are left empty."""
    if traj.true_states is not None:
        n = traj.true_states.shape[1]
    elif len(record):
        n = len(record.posteriors[0])
    else:
        raise InvalidArgumentError("cannot infer the state dimension of an empty record without truth")
    m = traj.measurements.shape[1]
    if len(record) > len(traj):
        raise InvalidArgumentError(f"record has {len(record)} rows, trajectory only {len(traj)}")
    rows = []
    for k in range(len(record)):
        truth = [fmt(v) for v in traj.true_states[k]] if traj.true_states is not None else [""] * n
        err = fmt(record.error_norms[k]) if k < len(record.error_norms) else ""
        rows.append(
            [str(k), fmt(traj.times[k])]
            + truth
            + [fmt(v) for v in traj.measurements[k]]
            + [fmt(v) for v in record.priors[k]]
            + [fmt(v) for v in record.posteriors[k]]
            + [err, fmt(record.traces[k])]
        )
    _write(path, trajectory_header(n, m), rows)


def emit_trajectory(traj, path):
    m = traj.measurements.shape[1]
    has_truth = traj.true_states is not None
    n = traj.true_states.shape[1] if has_truth else 0
    header = ["k", "t"] + [f"x_true_{i}" for i in range(1, n + 1)] + [f"y_{i}" for i in range(1, m + 1)]
    rows = [
        [str(k), fmt(traj.times[k])]
        + ([fmt(v) for v in traj.true_states[k]] if has_truth else [])
        + [fmt(v) for v in traj.measurements[k]]
        for k in range(len(traj))
    ]
    _write(path, header, rows)


def emit_loss(trace, path, window=None):
    """Raw loss curve, or trailing moving averages when ``window`` is given
    (the validation series is averaged over its own samples).

    ``val_loss`` is filled only on iterations where validation ran.
    """
    train = np.asarray(trace.train_losses, dtype=np.float64)
    val_losses = np.asarray(trace.val_losses, dtype=np.float64)
    if window is not None:
        train = smooth(train, window)
        val_losses = smooth(val_losses, window)
    val = dict(zip(trace.val_iterations, val_losses))
    rows = [[str(it), fmt(loss), fmt(val[it]) if it in val else ""] for it, loss in zip(trace.iterations, train)]
    _write(path, ["iteration", "train_loss", "val_loss"], rows)


def emit_csv(obj, path, traj=None, window=None):
    """Write a LossTrace, a Trajectory, or a FilterRecord (which needs its
    trajectory for the truth and measurement columns)."""
    if isinstance(obj, Trajectory):
        emit_trajectory(obj, path)
    elif isinstance(obj, LossTrace):
        emit_loss(obj, path, window)
    elif isinstance(obj, FilterRecord):
        if traj is None:
            raise InvalidArgumentError("a filter record is written alongside its trajectory")
        emit_record(obj, traj, path)
    else:
        raise InvalidArgumentError(f"cannot write {type(obj).__name__} as CSV")


def read_csv(path):
    """Header and float rows (empty cells become NaN)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(c) if c else np.nan for c in r] for r in body], dtype=np.float64)
    return header, data.reshape(len(body), len(header))
