import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from neural_filter import dynamics as D
from neural_filter import mlp as M
from neural_filter import training as T
from neural_filter.errors import InvalidArgumentError, TrainingDivergenceError
from oracles import ORACLE_RHS, rk4

PENDULUM_BOX = T.SampleBox([-np.pi / 2, -5.0], [np.pi / 2, 5.0])


def linear_dataset(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 3))
    c = rng.normal(size=2)
    X = rng.uniform(-1, 1, (n, 3))
    return T.Dataset(X, X @ A.T + c, 0.1), A, c


def linear_model():
    return M.init_model(3, [M.LayerSpec(2, "linear")], seed=0)


def test_sample_box_validation():
    with pytest.raises(InvalidArgumentError):
        T.SampleBox([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        T.SampleBox([0.0], [1.0, 2.0])
    box = T.SampleBox.from_pairs([(-1, 1), (0, 2)])
    assert box.dim == 2


def test_pendulum_dataset_shape():
    d = T.generate_dataset(D.pendulum(), PENDULUM_BOX, 15000, 0.1, seed=0)
    assert d.inputs.shape == (15000, 2) and d.targets.shape == (15000, 2)
    assert np.all(d.inputs >= PENDULUM_BOX.lower) and np.all(d.inputs <= PENDULUM_BOX.upper)


@pytest.mark.slow
def test_lorenz_dataset_shape():
    box = T.SampleBox([-15.0] * 3, [15.0] * 3)
    d = T.generate_dataset(D.lorenz(), box, 100000, 0.01, seed=0)
    assert d.inputs.shape == (100000, 3) and d.targets.shape == (100000, 3)


@pytest.mark.parametrize(
    "name, box, ts",
    [
        ("pendulum", PENDULUM_BOX, 0.1),
        ("van_der_pol", T.SampleBox([-5.0, -5.0], [5.0, 5.0]), 0.1),
        ("lorenz", T.SampleBox([-15.0] * 3, [15.0] * 3), 0.01),
        ("double_pendulum", T.SampleBox([-np.pi / 2, -0.5] * 2, [np.pi / 2, 0.5] * 2), 0.01),
    ],
)
def test_dataset_rows_match_rk4(name, box, ts):
    d = T.generate_dataset(D.make_system(name), box, 5, ts, seed=1)
    for x0, x1 in zip(d.inputs, d.targets):
        assert_allclose(x1, rk4(ORACLE_RHS[name], x0, ts, dt=1e-4), rtol=0, atol=1e-6)


def test_dataset_is_seeded_and_read_only():
    a = T.generate_dataset(D.pendulum(), PENDULUM_BOX, 50, 0.1, seed=3)
    b = T.generate_dataset(D.pendulum(), PENDULUM_BOX, 50, 0.1, seed=3)
    assert_array_equal(a.inputs, b.inputs)
    assert_array_equal(a.targets, b.targets)
    with pytest.raises(ValueError):
        a.inputs[0, 0] = 1.0


def test_dataset_box_must_match_system():
    with pytest.raises(InvalidArgumentError):
        T.generate_dataset(D.lorenz(), PENDULUM_BOX, 10, 0.01)


def test_split_small():
    d = T.Dataset(np.arange(10.0)[:, None], np.arange(10.0)[:, None], 0.1)
    train, val = T.split_dataset(d, 0.8, seed=0)
    assert len(train) == 8 and len(val) == 2
    rows = sorted(np.concatenate([train.inputs[:, 0], val.inputs[:, 0]]))
    assert_array_equal(rows, np.arange(10.0))


def test_split_eighty_twenty_and_seed():
    d = T.Dataset(np.zeros((15000, 2)), np.zeros((15000, 2)), 0.1)
    train, val = T.split_dataset(d, 0.8, seed=4)
    assert (len(train), len(val)) == (12000, 3000)
    d = T.Dataset(np.arange(100.0)[:, None], np.zeros((100, 1)), 0.1)
    a, _ = T.split_dataset(d, 0.8, seed=4)
    b, _ = T.split_dataset(d, 0.8, seed=4)
    assert_array_equal(a.inputs, b.inputs)


def test_split_rejects_empty_partition():
    d = T.Dataset(np.zeros((3, 1)), np.zeros((3, 1)), 0.1)
    with pytest.raises(InvalidArgumentError):
        T.split_dataset(d, 0.1)


def test_adam_zero_gradient_keeps_params():
    cfg = T.TrainConfig()
    p = np.array([1.0, -2.0])
    new, _ = T.adam_step(p, np.zeros(2), T.AdamState.zeros_like(p), 1, cfg)
    assert_array_equal(new, p)


def test_adam_first_step_magnitude():
    cfg = T.TrainConfig()
    new, state = T.adam_step(np.array([0.0]), np.array([1.0]), T.AdamState.zeros_like(np.zeros(1)), 1, cfg)
    assert_allclose(new, [-cfg.learning_rate / (1.0 + cfg.adam_eps)], rtol=1e-12)
    assert_allclose(state.m, [0.1])
    assert_allclose(state.v, [0.001])


def test_adam_does_not_mutate_inputs():
    p = np.array([1.0])
    state = T.AdamState.zeros_like(p)
    T.adam_step(p, np.array([2.0]), state, 1, T.TrainConfig())
    assert_array_equal(p, [1.0])
    assert_array_equal(state.m, [0.0])


def test_adam_scalar_quadratic_converges():
    cfg = T.TrainConfig(learning_rate=1e-2)
    p = np.array([0.0])
    state = T.AdamState.zeros_like(p)
    for t in range(1, 5001):
        p, state = T.adam_step(p, 2 * (p - 3.0), state, t, cfg)
        if abs(p[0] - 3.0) < 1e-3:
            break
    assert abs(p[0] - 3.0) < 1e-3


def test_adam_without_momentum_is_sign_descent():
    cfg = T.TrainConfig(adam_beta1=0.0, adam_beta2=0.0, learning_rate=0.1)
    g = np.array([3.0, -0.5, 1e-3])
    p = np.zeros(3)
    new, _ = T.adam_step(p, g, T.AdamState.zeros_like(p), 7, cfg)
    assert_allclose(new, -0.1 * g / (np.abs(g) + cfg.adam_eps), rtol=1e-12)


def test_adam_rejects_bad_input():
    cfg = T.TrainConfig()
    state = T.AdamState.zeros_like(np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        T.adam_step(np.zeros(2), np.zeros(3), state, 1, cfg)
    with pytest.raises(InvalidArgumentError):
        T.adam_step(np.zeros(2), np.zeros(2), state, 0, cfg)
    with pytest.raises(TrainingDivergenceError):
        T.adam_step(np.zeros(2), np.array([np.nan, 0.0]), state, 1, cfg)


def test_train_config_validation():
    for bad in (
        dict(batch_size=0),
        dict(split_fraction=1.0),
        dict(learning_rate=0.0),
        dict(adam_beta1=1.0),
        dict(epochs=-1),
        dict(validation_every=0),
    ):
        with pytest.raises(InvalidArgumentError):
            T.TrainConfig(**bad)


def test_train_linear_map_to_zero_loss():
    d, _, _ = linear_dataset()
    model, trace = T.train(linear_model(), d, T.TrainConfig(epochs=300, learning_rate=1e-2, seed=1))
    assert trace.final_train_loss < 1e-8
    assert trace.final_val_loss < 1e-8


def test_train_zero_epochs_is_identity():
    d, _, _ = linear_dataset()
    model = linear_model()
    out, trace = T.train(model, d, T.TrainConfig(epochs=0))
    assert out is model
    assert len(trace) == 0 and trace.val_losses == []


def test_trace_bookkeeping():
    d, _, _ = linear_dataset(n=1000)
    cfg = T.TrainConfig(epochs=3, batch_size=32, validation_every=30)
    _, trace = T.train(linear_model(), d, cfg)
    per_epoch = -(-800 // 32)
    assert trace.iterations == list(range(1, 3 * per_epoch + 1))
    assert trace.val_iterations == list(range(30, 3 * per_epoch + 1, 30))
    assert len(trace.train_losses) == len(trace.iterations)


def test_train_is_deterministic_and_leaves_data_untouched():
    d, _, _ = linear_dataset()
    before = (d.inputs.copy(), d.targets.copy())
    model = M.init_model(3, M.parse_layers("8:relu, 2:linear"), seed=2)
    cfg = T.TrainConfig(epochs=2, seed=9)
    a, ta = T.train(model, d, cfg)
    b, tb = T.train(model, d, cfg)
    assert_array_equal(a.flat_params(), b.flat_params())
    assert ta.train_losses == tb.train_losses
    assert ta.val_losses == tb.val_losses
    assert_array_equal(d.inputs, before[0])
    assert_array_equal(d.targets, before[1])


def test_validation_rows_never_train():
    d = T.Dataset(np.arange(20.0)[:, None], np.zeros((20, 1)), 0.1)
    train, val = T.split_dataset(d, 0.8, seed=0)
    assert not set(train.inputs[:, 0]) & set(val.inputs[:, 0])
    # Poisoned validation targets must not influence the fitted parameters.
    model = M.init_model(1, [M.LayerSpec(1, "linear")], seed=0)
    cfg = T.TrainConfig(epochs=3, batch_size=4, validation_every=2)
    a, _ = T.train(model, train, cfg, validation=val)
    poisoned = T.Dataset(val.inputs, np.full((len(val), 1), 1e6), 0.1)
    b, _ = T.train(model, train, cfg, validation=poisoned)
    assert_array_equal(a.flat_params(), b.flat_params())


def test_train_bias_free_keeps_biases_zero():
    d, _, _ = linear_dataset()
    model = M.init_model(3, M.parse_layers("6:relu, 2:linear"), seed=2, use_bias=False)
    out, _ = T.train(model, d, T.TrainConfig(epochs=2))
    assert all(np.all(b == 0) for b in out.biases)


def test_train_divergence_reports_trace():
    d, _, _ = linear_dataset()
    huge = T.Dataset(d.inputs * 1e200, d.targets * 1e200, 0.1)
    with pytest.raises(TrainingDivergenceError) as info:
        T.train(linear_model(), huge, T.TrainConfig(epochs=1))
    assert info.value.trace is not None


def test_train_dimension_mismatch():
    d, _, _ = linear_dataset()
    with pytest.raises(InvalidArgumentError):
        T.train(M.init_model(2, [M.LayerSpec(2, "linear")]), d, T.TrainConfig(epochs=1))


def test_standardizer_fold_is_exact_inverse_of_unfold():
    d, _, _ = linear_dataset()
    stats = T.Standardizer.from_dataset(d)
    model = M.init_model(3, M.parse_layers("5:relu, 2:linear"), seed=1)
    assert_allclose(stats.unfold(stats.fold(model)).flat_params(), model.flat_params(), atol=1e-14)
    X = np.random.default_rng(2).normal(size=(10, 3))
    folded = stats.fold(model)
    expected = M.forward(model, (X - stats.in_mean) / stats.in_scale) * stats.out_scale + stats.out_mean
    assert_allclose(M.forward(folded, X), expected, rtol=1e-12, atol=1e-12)


def test_normalized_training_reports_raw_units():
    d, _, _ = linear_dataset()
    model = T.Standardizer.from_dataset(d).fold(linear_model())
    out, trace = T.train(model, d, T.TrainConfig(epochs=100, learning_rate=1e-2, normalize=True))
    train, val = T.split_dataset(d, 0.8, 0)
    assert_allclose(trace.final_val_loss, T.mse(out, val))
    assert trace.final_train_loss < 1e-8


def test_smooth_trailing_average():
    assert_allclose(T.smooth([1.0, 2.0, 3.0, 4.0], window=2), [1.0, 1.5, 2.5, 3.5])
    assert T.smooth([], 25).size == 0


def test_pendulum_nn1_validation_drops_two_decades():
    d = T.generate_dataset(D.pendulum(), PENDULUM_BOX, 15000, 0.1, seed=0)
    model = M.init_model(2, M.parse_layers("10:relu, 2:linear"), seed=1)
    _, trace = T.train(model, d, T.TrainConfig(epochs=200, seed=2))
    assert trace.val_losses[-1] <= 1e-2 * trace.val_losses[0]
