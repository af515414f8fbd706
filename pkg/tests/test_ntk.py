import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vspinn.network import MlpConfig, MlpParams, init_params
from vspinn.ntk import (
    NtkReport,
    TraceMonitor,
    avg_rate,
    closed_form_kuu_limit,
    cubic_ntk_config,
    kernel_matrices,
    krr_contributions,
    kuu_contributions,
    kuu_limit_with_bias,
    loglog_slope,
    measure,
    point_gradient,
    seed_averaged_kuu,
    trace_krr,
    trace_kuu,
)


def zero_params(width=8):
    cfg = cubic_ntk_config(width)
    return MlpParams(cfg, [np.zeros((1, width)), np.zeros((width, 1))], [np.zeros(width), np.zeros(1)])


def test_closed_form_values():
    assert closed_form_kuu_limit(0.0) == 21.0
    assert closed_form_kuu_limit(1.0) == 168.0
    assert closed_form_kuu_limit(2.0) == 2625.0
    assert kuu_limit_with_bias(1.0) == 169.0


def test_zero_params_kuu_is_output_bias_only():
    assert trace_kuu(zero_params(), [[0.7]]) == 1.0


def test_zero_params_krr_vanishes():
    assert trace_krr(zero_params(), [[0.3], [2.0]]) == 0.0


def test_zero_params_avg_rate():
    assert avg_rate(zero_params(), [[0.0], [1.0]], [[0.5]]) == 1.0


def test_single_point_trace_is_squared_norm():
    p = init_params(cubic_ntk_config(32, seed=2))
    g = point_gradient(p, [0.4])
    assert trace_kuu(p, [[0.4]]) == pytest.approx(float(g @ g))
    g2 = point_gradient(p, [0.4], "u_xx")
    assert trace_krr(p, [[0.4]]) == pytest.approx(float(g2 @ g2))


def test_closed_form_gradient_for_one_hidden_layer():
    # d u / d theta for u = (1/sqrt d) sum W2 sigma(W1 x + b1) + b2
    p = init_params(cubic_ntk_config(16, seed=5))
    x = 0.8
    w1, b1, w2 = p.weights[0][0], p.biases[0], p.weights[1][:, 0]
    z = w1 * x + b1
    r = np.maximum(z, 0.0)
    d = math.sqrt(16)
    expected = (np.sum((w2 * 3 * r**2 * x / d) ** 2) + np.sum((w2 * 3 * r**2 / d) ** 2)
                + np.sum((r**3 / d) ** 2) + 1.0)
    assert trace_kuu(p, [[x]]) == pytest.approx(expected, rel=1e-12)


def test_krr_has_no_output_bias_part():
    p = init_params(cubic_ntk_config(16, seed=1))
    g = point_gradient(p, [0.5], "u_xx")
    assert g[-1] == 0.0  # the output bias is the last parameter


def test_empty_points_rejected():
    with pytest.raises(ValueError):
        trace_kuu(zero_params(), np.zeros((0, 1)))


def test_bad_quantity():
    with pytest.raises(ValueError):
        point_gradient(zero_params(), [0.0], "u_x")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 4))
def test_trace_is_permutation_and_duplication_invariant(seed, copies):
    rng = np.random.default_rng(seed)
    p = init_params(cubic_ntk_config(16, seed=seed))
    pts = rng.uniform(0, 3, size=(5, 1))
    base = trace_kuu(p, pts)
    assert trace_kuu(p, pts[::-1]) == pytest.approx(base, rel=1e-12)
    assert trace_kuu(p, np.tile(pts, (copies, 1))) == pytest.approx(base, rel=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_traces_non_negative(seed):
    p = init_params(MlpConfig(1, 1, (6, 6), activation="tanh", seed=seed))
    pts = np.random.default_rng(seed).uniform(0, 2, size=(4, 1))
    assert np.all(kuu_contributions(p, pts) >= 0)
    assert np.all(krr_contributions(p, pts) >= 0)


def test_kernel_diagonal_matches_contributions():
    p = init_params(cubic_ntk_config(24, seed=3))
    b = np.array([[0.0], [2.0]])
    r = np.array([[0.5], [1.0], [1.5]])
    K = kernel_matrices(p, b, r)
    assert K["K_uu"].shape == (2, 2) and K["K_rr"].shape == (3, 3) and K["K_ru"].shape == (3, 2)
    assert np.allclose(np.diag(K["K_uu"]), kuu_contributions(p, b))
    assert np.allclose(np.diag(K["K_rr"]), krr_contributions(p, r))
    assert np.allclose(K["K_uu"], K["K_uu"].T)


def test_kernel_matrix_size_guard():
    with pytest.raises(ValueError):
        kernel_matrices(zero_params(), np.zeros((300, 1)), np.ones((2, 1)))


# ---------------------------------------------------------------- slopes


def test_slope_of_power_law():
    pairs = [(n, n**6) for n in (2.0, 4.0, 8.0)]
    assert loglog_slope(pairs)[0] == pytest.approx(6.0)


def test_slope_of_constant():
    assert loglog_slope([(1.0, 3.0), (10.0, 3.0)])[0] == pytest.approx(0.0, abs=1e-12)


def test_slope_of_closed_form():
    s, _ = loglog_slope([(n, closed_form_kuu_limit(n)) for n in (4, 8, 16, 32)])
    assert 5.9 <= s <= 6.0


def test_slope_rejects_non_positive():
    with pytest.raises(ValueError):
        loglog_slope([(1.0, 1.0), (2.0, 0.0)])
    with pytest.raises(ValueError):
        loglog_slope([(1.0, 1.0)])


# ---------------------------------------------------------------- Monte Carlo


def test_wide_network_near_closed_form_at_one():
    mean, _ = seed_averaged_kuu(1.0, 40_000)
    assert abs(mean / 168.0 - 1) < 0.1


def test_width_convergence():
    gaps = [abs(seed_averaged_kuu(1.0, w)[0] - kuu_limit_with_bias(1.0)) for w in (256, 4096, 40_000)]
    assert gaps[-1] / kuu_limit_with_bias(1.0) < 0.05
    assert gaps[-1] < gaps[0]


def test_krr_at_one_is_finite_and_positive():
    vals = [trace_krr(init_params(cubic_ntk_config(40_000, s)), [[1.0]]) for s in range(16)]
    assert all(v > 0 and math.isfinite(v) for v in vals)


def test_avg_rate_grows_with_scale():
    rates = []
    for N in (1.0, 2.0, 4.0):
        vals = [avg_rate(init_params(cubic_ntk_config(2048, s)), [[0.0], [N]], [[N / 2]]) for s in range(8)]
        rates.append(np.mean(vals))
    assert rates[0] < rates[1] < rates[2]


def test_krr_slope_small_scales():
    rep = measure([1, 2, 4, 8, 16], width=1024, seeds=range(8), n_interior=32)
    assert rep.krr_slope <= 2.3


def test_report_outputs():
    rep = measure([2, 4], width=64, seeds=range(3), n_interior=4)
    csv = rep.to_csv().splitlines()
    assert csv[0] == "N,trace_kuu,trace_kuu_se,trace_krr,trace_krr_se"
    assert len(csv) == 3
    text = rep.to_text()
    assert "slope Tr(K_uu)/N_b" in text and "width: 64" in text
    assert rep.rows[0].kuu_points.shape == (2,)
    assert isinstance(rep, NtkReport)


def test_trace_monitor_records_every_k():
    mon = TraceMonitor([[0.0], [1.0]], [[0.5]], every=3)
    p = init_params(cubic_ntk_config(8))
    for epoch in range(7):
        mon(epoch, p)
    assert [r[0] for r in mon.rows] == [0, 3, 6]
