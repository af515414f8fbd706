import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vspinn.diffcore import Tape
from vspinn.network import (
    MlpConfig,
    MlpParams,
    bind,
    evaluate,
    forward,
    forward_jet,
    forward_jets,
    init_params,
    load_checkpoint,
    save_checkpoint,
)


def run_forward(params, x):
    t = Tape()
    return forward(bind(t, params), x).value


def run_jet(params, x, direction=0, output=0):
    t = Tape()
    j = forward_jet(bind(t, params), x, direction)[output]
    return j.value.value, j.d1.value, j.d2.value


def one_hidden(w1, b1, w2, b2, activation="cubic_relu", parameterization="ntk_scaled"):
    w1, b1, w2 = (np.asarray(a, dtype=float) for a in (w1, b1, w2))
    cfg = MlpConfig(1, 1, (len(b1),), activation=activation, parameterization=parameterization)
    return MlpParams(cfg, [w1.reshape(1, -1), w2.reshape(-1, 1)], [b1, np.array([float(b2)])])


# ---------------------------------------------------------------- config


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(hidden=()),
        dict(hidden=(0,)),
        dict(activation="relu"),
        dict(parameterization="mup"),
        dict(init="he"),
        dict(init_std=0.0),
    ],
)
def test_invalid_configs(kwargs):
    base = dict(input_dim=1, output_dim=1, hidden=(4,))
    base.update(kwargs)
    with pytest.raises(ValueError):
        MlpConfig(**base)


def test_param_shapes_are_checked():
    cfg = MlpConfig(2, 1, (3,))
    with pytest.raises(ValueError):
        MlpParams(cfg, [np.zeros((3, 2)), np.zeros((3, 1))], [np.zeros(3), np.zeros(1)])


# ---------------------------------------------------------------- init


def test_init_is_deterministic():
    cfg = MlpConfig(2, 3, (8, 8), seed=11)
    a, b = init_params(cfg), init_params(cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_gaussian_init_moments():
    cfg = MlpConfig(1, 1, (100_000,), init="gaussian", init_std=1.0, seed=0)
    w = init_params(cfg).weights[0]
    assert abs(w.mean()) < 0.02
    assert abs(w.var() - 1.0) < 0.05


def test_glorot_bound():
    cfg = MlpConfig(3, 1, (50,), seed=4)
    w = init_params(cfg).weights[0]
    assert np.all(np.abs(w) <= math.sqrt(6.0 / (3 + 50)))


# ---------------------------------------------------------------- forward


def test_zero_weights_give_output_bias():
    cfg = MlpConfig(2, 2, (5, 5))
    p = init_params(cfg)
    p = MlpParams(cfg, [np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    p.biases[-1][:] = [0.25, -1.5]
    out = run_forward(p, np.random.default_rng(0).normal(size=(4, 2)))
    assert np.all(out == np.array([0.25, -1.5]))


def test_single_tanh_neuron_at_origin():
    p = one_hidden([1.0], [0.0], [1.0], 0.0, activation="tanh", parameterization="standard")
    assert run_forward(p, [[0.0]])[0, 0] == 0.0


def test_ntk_scaled_hand_computation():
    # width 4: the output layer is scaled by 1/sqrt(4) = 1/2
    w1 = np.array([0.5, -1.0, 2.0, 1.0])
    b1 = np.array([0.1, 0.2, -0.3, 0.0])
    w2 = np.array([1.0, 2.0, -1.0, 0.5])
    p = one_hidden(w1, b1, w2, 0.3)
    x = 0.7
    hidden = np.maximum(w1 * x + b1, 0.0) ** 3
    expected = 0.5 * (w2 @ hidden) + 0.3
    assert run_forward(p, [[x]])[0, 0] == pytest.approx(expected, rel=1e-14)


def test_dimension_mismatch():
    p = init_params(MlpConfig(2, 1, (3,)))
    with pytest.raises(ValueError):
        run_forward(p, np.zeros((4, 3)))


def test_evaluate_matches_tape_bitwise():
    rng = np.random.default_rng(1)
    for act in ("tanh", "cubic_relu"):
        for par in ("standard", "ntk_scaled"):
            p = init_params(MlpConfig(3, 2, (7, 5), activation=act, parameterization=par, init="gaussian", seed=2))
            x = rng.normal(size=(6, 3))
            assert np.array_equal(evaluate(p, x), run_forward(p, x))


# ---------------------------------------------------------------- jets


def test_second_derivative_of_one_hidden_cubic_net():
    w1 = np.array([0.5, -1.0, 2.0])
    b1 = np.array([0.1, 0.2, -0.3])
    w2 = np.array([1.0, 2.0, -1.0])
    p = one_hidden(w1, b1, w2, 0.0)
    x = 0.4
    z = w1 * x + b1
    sigma2 = 6.0 * np.maximum(z, 0.0)
    expected = (w2 * sigma2 * w1**2).sum() / math.sqrt(3)
    _, _, d2 = run_jet(p, [[x]])
    assert d2[0] == pytest.approx(expected, rel=1e-13)


def test_near_linear_net_has_tiny_curvature():
    p = one_hidden([1e-3, -2e-3], [0.0, 0.0], [1.0, 1.0], 0.0, activation="tanh", parameterization="standard")
    _, _, d2 = run_jet(p, [[0.2]])
    assert abs(d2[0]) < 1e-8


def test_direction_out_of_range():
    p = init_params(MlpConfig(2, 1, (3,)))
    with pytest.raises(ValueError):
        run_jet(p, np.zeros((1, 2)), direction=2)


def test_jet_value_equals_forward():
    p = init_params(MlpConfig(2, 3, (6, 6), seed=5))
    x = np.random.default_rng(2).normal(size=(5, 2))
    t = Tape()
    net = bind(t, p)
    value, jets = forward_jets(net, x, (0, 1))
    assert np.array_equal(value.value, evaluate(p, x))
    assert set(jets) == {0, 1}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["tanh", "cubic_relu"]), st.integers(0, 1))
def test_jets_match_finite_differences(seed, activation, direction):
    rng = np.random.default_rng(seed)
    cfg = MlpConfig(2, 2, (8, 8), activation=activation, init="gaussian", init_std=0.7, seed=seed)
    p = init_params(cfg)
    x = rng.uniform(-1, 1, size=(5, 2))
    h = 1e-4
    e = np.zeros(2)
    e[direction] = h
    t = Tape()
    _, jets = forward_jets(bind(t, p), x, (direction,))
    d1, d2 = (v.value for v in jets[direction])
    fp, f0, fm = evaluate(p, x + e), evaluate(p, x), evaluate(p, x - e)
    fd1 = (fp - fm) / (2 * h)
    fd2 = (fp - 2 * f0 + fm) / h**2
    # relative to the sup-norm of each derivative array over the batch
    assert np.max(np.abs(d1 - fd1)) <= 1e-6 * max(1.0, np.max(np.abs(d1)))
    assert np.max(np.abs(d2 - fd2)) <= 1e-4 * max(1.0, np.max(np.abs(d2)))


def test_ntk_output_scale_is_width_stable():
    # Output variance over initializations, integrated exactly over the N(0, 1)
    # readout weights and bias: Var u(x) = mean_k sigma(z_k)^2 + 1.  A plain
    # 64-sample standard deviation carries ~9% sampling error on its own.
    x = 0.5

    def std(width):
        second = []
        for s in range(64):
            p = init_params(MlpConfig(1, 1, (width,), activation="tanh", parameterization="ntk_scaled",
                                      init="gaussian", seed=s))
            h = np.tanh(x * p.weights[0][0] + p.biases[0])
            second.append(np.mean(h**2) + 1.0)
        return math.sqrt(np.mean(second))

    a, b = std(2048), std(4096)
    assert abs(b / a - 1) < 0.1


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    p = init_params(MlpConfig(3, 2, (4, 5), activation="cubic_relu", init="gaussian", init_std=0.3, seed=9))
    path = tmp_path / "net.ckpt"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert q.config == p.config
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_text("hello\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)
