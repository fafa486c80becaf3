"""Randomized invariants, at least 100 generated cases each."""

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from neural_filter import dynamics as D
from neural_filter import filter as F
from neural_filter import mlp as M
from neural_filter import training as T
from oracles import central_difference_jacobian, jacobian_rel_error

CASES = settings(max_examples=120, deadline=None, suppress_health_check=[HealthCheck.too_slow])

seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=1, max_value=5)


def spd(rng, n, scale=1.0):
    L = rng.normal(size=(n, n))
    return scale * (L @ L.T + 1e-3 * np.eye(n))


def random_net(rng, input_dim, depth, width, output_dim, use_bias=True):
    layers = [M.LayerSpec(width) for _ in range(depth)] + [M.LayerSpec(output_dim, "linear")]
    model = M.init_model(input_dim, layers, seed=int(rng.integers(2**31)), use_bias=use_bias)
    if use_bias:
        biases = tuple(rng.normal(0, 0.5, b.shape) for b in model.biases)
        model = M.MlpModel(input_dim, model.layers, model.weights, biases)
    return model


nets = st.tuples(seeds, st.integers(1, 4), st.integers(0, 3), st.integers(1, 8))


def build(params, use_bias=True):
    seed, n, depth, width = params
    rng = np.random.default_rng(seed)
    return rng, random_net(rng, n, depth, width, n, use_bias)


@CASES
@given(seeds, dims, st.integers(1, 3))
def test_covariance_stays_symmetric_psd(seed, n, m):
    rng = np.random.default_rng(seed)
    model = random_net(rng, n, 1, 6, n)
    C = rng.normal(size=(m, n))
    cfg = F.FilterConfig(spd(rng, n, 1e-2), D.MeasurementModel(C, float(rng.uniform(0.05, 1.0))), spd(rng, n))
    state = cfg.initial_state()
    for k in range(1, 20):
        x_prior, p_prior = F.predict(model, state, cfg)
        state, _ = F.update(x_prior, p_prior, rng.normal(size=m), cfg, step=k)
        for P in (p_prior, state.p_matrix):
            assert_array_equal(P, P.T)
            assert np.linalg.eigvalsh(P).min() >= -1e-10


@CASES
@given(seeds, dims, st.integers(1, 3))
def test_joseph_form_agrees_with_short_form(seed, n, m):
    rng = np.random.default_rng(seed)
    P = spd(rng, n)
    C = rng.normal(size=(m, n))
    meas = D.MeasurementModel(C, float(rng.uniform(0.1, 2.0)))
    cfg = F.FilterConfig(np.zeros((n, n)), meas, P)
    state, K = F.update(np.zeros(n), P, np.zeros(m), cfg)
    I_KC = np.eye(n) - K @ C
    joseph = I_KC @ P @ I_KC.T + K @ meas.r_matrix @ K.T
    assert_allclose(state.p_matrix, joseph, rtol=0, atol=1e-9 * max(1.0, np.abs(P).max()))


@CASES
@given(seeds, dims, st.integers(1, 3))
def test_update_never_increases_trace(seed, n, m):
    rng = np.random.default_rng(seed)
    P = spd(rng, n)
    cfg = F.FilterConfig(np.zeros((n, n)), D.MeasurementModel(rng.normal(size=(m, n)), float(rng.uniform(0.01, 3.0))), P)
    state, _ = F.update(rng.normal(size=n), P, rng.normal(size=m), cfg)
    assert np.trace(state.p_matrix) <= np.trace(P) + 1e-12


@CASES
@given(seeds, dims)
def test_infinite_noise_update_is_predict_only(seed, n):
    rng = np.random.default_rng(seed)
    model = random_net(rng, n, 2, 5, n)
    cfg = F.FilterConfig(spd(rng, n, 1e-3), D.MeasurementModel(rng.normal(size=(1, n)), 1e9), spd(rng, n))
    x_prior, p_prior = F.predict(model, cfg.initial_state(), cfg)
    state, K = F.update(x_prior, p_prior, rng.normal(size=1), cfg)
    assert_allclose(state.x_hat, x_prior, rtol=1e-9, atol=1e-9)
    assert_allclose(state.p_matrix, p_prior, rtol=1e-9, atol=1e-12)


@CASES
@given(nets, seeds)
def test_piecewise_linearity(params, dseed):
    rng, model = build(params)
    x = rng.normal(size=model.input_dim)
    d = np.random.default_rng(dseed).normal(size=model.input_dim)
    margin = min((np.min(np.abs(z)) for z in M.preactivations(model, x)[:-1]), default=np.inf)
    # Layer i's preactivation moves by at most ||W_i|| ... ||W_1|| * eps * |d| (ReLU is 1-Lipschitz).
    norms = np.cumprod([np.linalg.norm(W, 2) for W in model.weights[:-1]])
    bound = (norms.max() if norms.size else 0.0) * np.linalg.norm(d)
    eps = 0.5 * margin / max(bound, 1e-12) if np.isfinite(margin) else 1.0
    eps = min(eps, 1.0)
    lhs = M.forward(model, x + eps * d)
    rhs = M.forward(model, x) + eps * M.jacobian_input(model, x) @ d
    assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


@CASES
@given(nets)
def test_jacobian_matches_finite_differences(params):
    rng, model = build(params)
    x = rng.uniform(-2, 2, model.input_dim)
    pre = M.preactivations(model, x)[:-1]
    # finite differences are meaningless across a kink
    assume(not pre or min(np.min(np.abs(z)) for z in pre) > 1e-3)
    numeric = central_difference_jacobian(lambda v: M.forward(model, v), x)
    assert jacobian_rel_error(M.jacobian_input(model, x), numeric) < 1e-5


@CASES
@given(nets, st.floats(1e-3, 1e3))
def test_bias_free_net_is_positively_homogeneous(params, alpha):
    rng, model = build(params, use_bias=False)
    x = rng.normal(size=model.input_dim)
    assert_allclose(M.forward(model, alpha * x), alpha * M.forward(model, x), rtol=1e-12, atol=1e-12)


@CASES
@given(nets, st.booleans())
def test_serialization_round_trip(tmp_path_factory, params, use_bias):
    rng, model = build(params, use_bias)
    path = tmp_path_factory.mktemp("models") / "m.nfm"
    M.save_model(model, path)
    loaded = M.load_model(path)
    assert loaded.layers == model.layers and loaded.use_bias == model.use_bias
    assert_array_equal(loaded.flat_params(), model.flat_params())


@CASES
@given(seeds, dims, st.integers(1, 4))
def test_measure_is_linear(seed, n, m):
    rng = np.random.default_rng(seed)
    model = D.MeasurementModel(rng.normal(size=(m, n)), 0.1)
    x, y = rng.normal(size=n), rng.normal(size=n)
    zero = np.zeros(m)
    assert_allclose(D.measure(model, x + y, zero), D.measure(model, x, zero) + D.measure(model, y, zero), atol=1e-12)


@CASES
@given(seeds, st.integers(1, 8))
def test_noiseless_truth_measurements_equal_c_x(seed, steps):
    rng = np.random.default_rng(seed)
    model = D.MeasurementModel(rng.normal(size=(2, 2)), 0.0)
    traj = D.simulate_truth(D.pendulum(), model, rng.uniform(-1, 1, 2), steps, 0.1, seed=seed)
    assert_array_equal(traj.measurements, [model.c_matrix @ x for x in traj.true_states])


@CASES
@given(seeds, st.integers(1, 50), st.floats(1e-4, 1.0))
def test_adam_without_momentum_is_sign_descent(seed, t, lr):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=5) * 10.0 ** rng.uniform(-3, 3, 5)
    p = rng.normal(size=5)
    cfg = T.TrainConfig(adam_beta1=0.0, adam_beta2=0.0, learning_rate=lr)
    new, _ = T.adam_step(p, g, T.AdamState(rng.normal(size=5), rng.uniform(0, 1, 5)), t, cfg)
    assert_allclose(new, p - lr * g / (np.abs(g) + cfg.adam_eps), rtol=1e-12, atol=1e-15)


@CASES
@given(seeds, st.integers(2, 200), st.floats(0.05, 0.95))
def test_split_partitions_rows(seed, n, fraction):
    assume(int(np.floor(n * fraction)) not in (0, n))
    d = T.Dataset(np.arange(float(n))[:, None], np.zeros((n, 1)), 0.1)
    a, b = T.split_dataset(d, fraction, seed)
    rows = np.concatenate([a.inputs[:, 0], b.inputs[:, 0]])
    assert_array_equal(np.sort(rows), np.arange(float(n)))
    assert len(a) == int(np.floor(n * fraction))
