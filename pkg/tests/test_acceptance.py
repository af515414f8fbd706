"""Acceptance criteria, one test each; every test prints a PASS or FAIL line.

The training criteria run their `desk` presets through the same code path as
``vspinn sweep`` and take from seconds (criterion 9) to tens of minutes
(criteria 5, 6 and 8) on one CPU core.
"""
import time

from vspinn.cli import D1_TOL, D2_TOL, GRAD_TOL, main, parse_config, property_report, run_sweep, run_train, self_check
from vspinn.network import init_params, load_checkpoint
from vspinn.ntk import closed_form_kuu_limit, measure, seed_averaged_kuu


def sweep(tmp_path, preset, **overrides):
    text = f"preset = {preset}\n" + "".join(f"{k} = {v}\n" for k, v in overrides.items())
    cfg = parse_config(text)
    start = time.perf_counter()
    results = run_sweep(cfg, tmp_path / preset)
    errors = {m["N"]: m["final_rel_l2"] for m in results}
    return errors, time.perf_counter() - start


def fmt(errors):
    return ", ".join(f"N={N:g}: {e:.4g}" for N, e in errors.items())


def test_criterion_1_autodiff_matches_finite_differences(record):
    start = time.perf_counter()
    cases = self_check(200, seed=0)
    elapsed = time.perf_counter() - start
    problems = {c.problem for c in cases}
    worst = (max(c.grad_err for c in cases), max(c.d1_err for c in cases), max(c.d2_err for c in cases))
    ok = all(c.passed for c in cases) and len(problems) == 6 and elapsed < 60
    record(1, ok, f"{sum(c.passed for c in cases)}/200 cases over {len(problems)} problems; worst gradient "
           f"{worst[0]:.2e} (<{GRAD_TOL:g}), d1 {worst[1]:.2e} (<{D1_TOL:g}), d2 {worst[2]:.2e} (<{D2_TOL:g}); "
           f"{elapsed:.0f} s")
    assert ok


def test_criterion_2_ntk_closed_form(record):
    start = time.perf_counter()
    rows = []
    for x in (0.0, 1.0, 2.0, 5.0):
        mean, _ = seed_averaged_kuu(x, 40000, range(16))
        target = closed_form_kuu_limit(x)
        rows.append((x, mean, target, abs(mean - target) / target))
    elapsed = time.perf_counter() - start
    ok = all(r[3] < 0.05 for r in rows) and elapsed < 120
    record(2, ok, "; ".join(f"x={x:g}: {m:.5g} vs {t:.5g} ({d:.2%})" for x, m, t, d in rows)
           + f"; {elapsed:.0f} s")
    assert ok


def test_criterion_3_ntk_slopes(record):
    start = time.perf_counter()
    report = measure((2, 4, 8, 16, 32), width=4096, seeds=range(16), n_interior=64)
    elapsed = time.perf_counter() - start
    ok = 5.5 <= report.kuu_slope <= 6.5 and report.krr_slope <= 2.3 and elapsed < 300
    record(3, ok, f"Tr(K_uu) slope {report.kuu_slope:.3f} in [5.5, 6.5], "
           f"Tr(K_rr) slope {report.krr_slope:.3f} <= 2.3; {elapsed:.0f} s")
    assert ok


def test_criterion_4_boundary_layer(tmp_path, record):
    errors, elapsed = sweep(tmp_path, "boundary_layer_desk")
    cfg = parse_config("preset = boundary_layer_desk")
    ok = errors[1000.0] < 5e-2 and errors[1.0] > 0.5 and cfg.epochs <= 30000
    record(4, ok, f"{fmt(errors)}; need N=1000 < 0.05 and N=1 > 0.5; {cfg.epochs} epochs, {elapsed:.0f} s")
    assert ok


def test_criterion_5_wave_desk(tmp_path, record):
    errors, elapsed = sweep(tmp_path, "wave_desk")
    ok = errors[10.0] <= 0.2 * errors[1.0] and errors[10.0] < errors[4.0] < errors[1.0]
    record(5, ok, f"{fmt(errors)}; need N=10 <= 0.2 x N=1 and N=10 < N=4 < N=1; {elapsed:.0f} s")
    assert ok


def test_criterion_6_allen_cahn_desk(tmp_path, record):
    errors, elapsed = sweep(tmp_path, "allen_cahn_desk")
    ok = errors[100.0] <= 0.5 * errors[1.0]
    record(6, ok, f"{fmt(errors)} against the IMEX oracle; need N=100 <= 0.5 x N=1; {elapsed:.0f} s")
    assert ok


def test_criterion_7_poisson_failure_mode(tmp_path, record):
    errors, elapsed = sweep(tmp_path, "poisson_desk")
    ok = errors[2.0] < errors[1.0] < errors[1000.0] and elapsed < 600
    record(7, ok, f"{fmt(errors)}; need N=2 < N=1 < N=1000; {elapsed:.0f} s")
    assert ok


def test_criterion_8_navier_stokes_properties(tmp_path, record):
    cfg = parse_config("preset = navier_stokes_desk")
    out = tmp_path / "ns"
    start = time.perf_counter()
    run_train(cfg, out)
    spec = cfg.spec()
    before = property_report(spec, init_params(cfg.net_config(spec)))
    after = property_report(spec, load_checkpoint(out / "checkpoint.txt"))
    elapsed = time.perf_counter() - start
    drop = before["residual_rms"] / after["residual_rms"]
    ok = drop >= 100 and after["bc_rms"] < 5e-2 and after["first_residual_rms"] < 5e-2
    record(8, ok, f"residual RMS {before['residual_rms']:.3g} -> {after['residual_rms']:.3g} "
           f"(drop {drop:.0f}x, need >= 100x), boundary RMS {after['bc_rms']:.3g} (< 0.05), "
           f"mass RMS {after['first_residual_rms']:.3g} (< 0.05); {elapsed:.0f} s")
    assert ok


def test_criterion_9_determinism(tmp_path, record):
    cfg = tmp_path / "tiny.txt"
    cfg.write_text("preset = tiny\nseed = 11\n", encoding="utf-8")
    start = time.perf_counter()
    codes = [main(["train", "--config", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    elapsed = time.perf_counter() - start
    a = (tmp_path / "a" / "curve.csv").read_bytes()
    b = (tmp_path / "b" / "curve.csv").read_bytes()
    ok = codes == [0, 0] and a == b and len(a.splitlines()) > 1
    record(9, ok, f"two runs of the tiny preset, curve.csv identical: {a == b}; {elapsed:.1f} s")
    assert ok
