"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--rows N] [--repeat R]

Each kernel is fed identical inputs on both backends and the outputs are
checked for agreement before any timing is reported.
"""

import argparse
import timeit

import numpy as np

from neural_filter import _pykernels
from neural_filter import dynamics as D
from neural_filter import mlp as M

try:
    from neural_filter import _core
except ImportError:
    _core = None


def integrate_case(rows):
    system = D.pendulum()
    x0 = np.random.default_rng(0).uniform([-1.5, -5.0], [1.5, 5.0], (rows, 2))
    args = (system.code, np.asarray(system.param_values), x0, 0.1, 1e-9, 1e-9, 1e-3, 1_000_000)
    return lambda k: k.integrate_batch(*args)[0]


def training_case(rows):
    rng = np.random.default_rng(1)
    model = M.init_model(2, M.parse_layers("10:relu, 2:linear"), seed=0)
    X = np.ascontiguousarray(rng.uniform(-1.5, 1.5, (rows, 2)))
    Y = np.ascontiguousarray(np.sin(X))
    order = rng.permutation(rows).astype(np.int64)
    mask = model.bias_mask()

    def run(k):
        flat = model.flat_params().copy()
        m, v = np.zeros_like(flat), np.zeros_like(flat)
        k.run_batches(
            flat, m, v, 0, model.input_dim, model.widths, model.activation_codes, X, Y, order,
            0, rows // 32, 32, 1e-3, 0.9, 0.999, 1e-8, mask,
        )
        return flat

    return run


def mse_case(rows):
    rng = np.random.default_rng(2)
    model = M.init_model(3, M.parse_layers("10:relu, 10:relu, 10:relu, 3:linear"), seed=0)
    X = np.ascontiguousarray(rng.normal(size=(rows, 3)))
    Y = np.ascontiguousarray(rng.normal(size=(rows, 3)))
    args = (model.flat_params(), model.input_dim, model.widths, model.activation_codes, X, Y)
    return lambda k: np.asarray(k.dataset_mse(*args))


CASES = {
    "integrate_batch": integrate_case,
    "run_batches (1 epoch)": training_case,
    "dataset_mse": mse_case,
}


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=2000, help="samples per kernel call")
    parser.add_argument("--repeat", type=int, default=3, help="timing repetitions; the best is kept")
    args = parser.parse_args(argv)
    if _core is None:
        parser.error("compiled extension is not built; run `pip install -e . --no-build-isolation`")

    print(f"{'kernel':<24}{'cython [s]':>12}{'python [s]':>12}{'speedup':>10}")
    for label, make in CASES.items():
        run = make(args.rows)
        np.testing.assert_allclose(run(_core), run(_pykernels), rtol=1e-10, atol=1e-12)
        fast = best_time(lambda: run(_core), args.repeat)
        slow = best_time(lambda: run(_pykernels), args.repeat)
        print(f"{label:<24}{fast:>12.4f}{slow:>12.4f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
