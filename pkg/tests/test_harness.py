import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridlock import harness, small_signal as ss
from gridlock.fll import DivergenceError, Estimator, FllConfigError, FllGains
from gridlock.harness import (
    RunConfig, Suite, compare_traces, paper_sweep, run, step_metrics, sweep_threads,
)
from gridlock.signals import (
    GridParams, GridScenario, frequency_step_scenario, phase_jump_scenario, synthesize_scenario,
)

from conftest import K, W0

STEP = 2 * math.pi * 5


def constant(duration=0.5):
    return GridScenario(GridParams(1.0, 60.0, 0.0), (), duration, 10_000.0)


# --- step metrics --------------------------------------------------------------------

def test_metrics_first_order_channel():
    t = np.arange(0, 0.1, 1e-5)
    y = np.where(t < 0.02, 0.0, 1 - np.exp(-K * (t - 0.02)))
    m = step_metrics(t, y, 0.02, 1.0)
    assert m.settling_time == pytest.approx(math.log(50) / K, abs=2e-5)
    assert m.settling_time == pytest.approx(10.38e-3, abs=0.02e-3)
    assert m.overshoot == 0.0 and m.settled


def test_metrics_second_order_channel():
    tf = ss.build_tf(ss.TfKind.CONV_OMEGA, K, 0.5 * K)
    t = np.arange(0, 0.1, 1e-5)
    y = 3.0 + 2.0 * ss.step_response(tf, t - 0.01)
    m = step_metrics(t, y, 0.01, 5.0)
    assert m.overshoot == pytest.approx(4.33, abs=0.01)
    assert m.peak_value == pytest.approx(5.0 + 0.0433 * 2, abs=1e-3)
    assert m.peak_time > 0.01


def test_metrics_falling_step():
    t = np.linspace(0, 1, 1001)
    y = np.where(t < 0.5, 2.0, 1.0 - 0.1 * np.exp(-20 * (t - 0.5)))
    m = step_metrics(t, y, 0.5, 1.0)
    assert m.overshoot == pytest.approx(10.0, abs=1e-9)
    assert m.peak_time == pytest.approx(0.5)


def test_metrics_constant_channel():
    t = np.linspace(0, 1, 101)
    m = step_metrics(t, np.full_like(t, 2.0), 0.5, 2.0, scale=1.0)
    assert m.settling_time == 0.0 and m.overshoot == 0.0 and m.steady_state_error == 0.0


def test_metrics_return_to_value():
    t = np.linspace(0, 1, 1001)
    y = np.where(t < 0.5, 1.0, 1.0 + 0.3 * np.exp(-50 * (t - 0.5)))
    m = step_metrics(t, y, 0.5, 1.0, scale=3.0)
    assert m.overshoot == pytest.approx(10.0)
    assert m.settling_time == pytest.approx(math.log(0.3 / 0.06) / 50, abs=1e-3)


def test_metrics_unsettled():
    t = np.linspace(0, 1, 101)
    y = np.where(t < 0.5, 0.0, 0.5)
    m = step_metrics(t, y, 0.5, 1.0)
    assert not m.settled and math.isinf(m.settling_time)
    assert m.residual == pytest.approx(0.5)
    # the CSV row marks an unsettled channel with NaN
    assert math.isnan(m.as_row()["settling_time_s"])


def test_metrics_errors():
    t = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        step_metrics(t, t, 2.0, 1.0)
    with pytest.raises(ValueError):
        step_metrics(t, np.ones(11), 0.5, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-2.0, 2.0).filter(lambda x: abs(x) > 1e-3), st.floats(5.0, 200.0))
def test_metrics_invariants(zeta, amp, wn):
    t = np.linspace(0, 2, 4001)
    tf = ss.RationalTf((wn * wn,), (wn * wn, 2 * zeta * wn, 1.0))
    y = amp * ss.step_response(tf, t - 0.5)
    m = step_metrics(t, y, 0.5, amp)
    assert m.settling_time >= 0 and m.overshoot >= 0 and m.peak_time >= 0.5
    assert m.overshoot == pytest.approx(ss.overshoot_percent(zeta), abs=0.05)


# --- compare_traces --------------------------------------------------------------------

def _short_trace():
    return run(RunConfig(Estimator.SRF_FLL, FllGains(), constant(0.01), warmup=0.0))


def test_compare_identical_is_zero():
    a = _short_trace()
    assert compare_traces(a, a, "omega_hat") == 0.0


def test_compare_is_wrap_aware():
    a, b = _short_trace(), _short_trace()
    a.outputs[:, harness._COL["theta_hat"]] = math.pi - 0.01
    b.outputs[:, harness._COL["theta_hat"]] = -math.pi + 0.01
    assert compare_traces(a, b, "theta_hat") == pytest.approx(0.02, abs=1e-12)


def test_compare_rejects_grid_mismatch():
    a = _short_trace()
    b = run(RunConfig(Estimator.SRF_FLL, FllGains(), constant(0.02), warmup=0.0))
    with pytest.raises(ValueError):
        compare_traces(a, b, "omega_hat")


def test_unknown_channel():
    with pytest.raises(KeyError):
        _short_trace().channel("nope")


# --- run ---------------------------------------------------------------------------------

@pytest.mark.parametrize("est", list(Estimator))
def test_constant_input_stays_locked_after_warmup(est, backend):
    tr = run(RunConfig(est, FllGains(), constant()), backend)
    i = tr.index_at(0.2)
    assert np.max(np.abs(tr.omega_hat[i:] - W0)) < 1e-3


@pytest.mark.parametrize("est", list(Estimator))
def test_run_is_deterministic(est):
    cfg = RunConfig(est, FllGains(K, K), phase_jump_scenario(0.5))
    a, b = run(cfg), run(cfg)
    assert np.array_equal(a.outputs, b.outputs) and np.array_equal(a.t, b.t)


def test_trace_shape():
    sc = frequency_step_scenario(5.0)
    tr = run(RunConfig(Estimator.CONVENTIONAL, FllGains(), sc))
    assert len(tr) == sc.n_samples == 5000
    assert np.allclose(np.diff(tr.t), sc.ts, rtol=0, atol=1e-15)
    assert tr.event_times() == [pytest.approx(0.25)]
    assert np.all(np.isfinite(tr.outputs))
    assert tr.config.estimator is Estimator.CONVENTIONAL


def test_conventional_tracks_small_signal_model():
    sc = frequency_step_scenario(5.0)
    tr = run(RunConfig(Estimator.CONVENTIONAL, FllGains(K, 0.5 * K), sc))
    i0 = tr.index_at(0.25)
    oracle = W0 + STEP * ss.step_response(ss.build_tf("ConvOmega", K, 0.5 * K), tr.t[i0:] - tr.t[i0])
    assert np.max(np.abs(tr.omega_hat[i0:] - oracle)) < 0.02 * STEP


@pytest.mark.parametrize("kw", [dict(warmup=0.25), dict(warmup=0.3)])
def test_warmup_must_precede_event(kw):
    with pytest.raises(FllConfigError):
        RunConfig(Estimator.SRF_FLL, FllGains(), frequency_step_scenario(1.0), **kw)


def test_sample_period_limit_uses_larger_gain():
    with pytest.raises(FllConfigError):
        RunConfig(Estimator.SRF_FLL0, FllGains(k=100.0, d=6000.0), constant())


def test_divergence_carries_sample_index(monkeypatch, backend):
    real = harness.synthesize_scenario

    def poisoned(sc):
        sig = real(sc)
        sig.u_ab[777] = complex(math.inf, 0.0)
        return sig

    monkeypatch.setattr(harness, "synthesize_scenario", poisoned)
    with pytest.raises(DivergenceError) as exc:
        run(RunConfig(Estimator.SRF_FLL, FllGains(), constant()), backend)
    assert exc.value.index == 777


# --- small-signal agreement ----------------------------------------------------------------

CASES = [
    (Estimator.CONVENTIONAL, "omega_hat", "ConvOmega", (0.25, 0.5, 1.0)),
    (Estimator.SRF_FLL0, "omega_hat", "ConvOmega", (0.25, 0.5, 1.0)),
    (Estimator.SRF_FLL, "omega_hat", "SrfOmega", (0.25, 0.5, 1.0, 2.0)),
    (Estimator.SRF_FLL, "omega_b", "SrfOmegaB", (0.25, 0.5, 1.0, 2.0)),
]


def _agreement(est, channel, kind, r, fs=10_000.0):
    step = 2 * math.pi * 0.5
    sc = frequency_step_scenario(0.5, sample_rate=fs)
    tr = run(RunConfig(est, FllGains(K, r * K), sc))
    i0, i1 = tr.index_at(0.25), tr.index_at(0.45)
    oracle = W0 + step * ss.step_response(ss.build_tf(kind, K, r * K), tr.t[i0:i1] - tr.t[i0])
    return np.max(np.abs(tr.channel(channel)[i0:i1] - oracle)) / step


@pytest.mark.parametrize("est, channel, kind, r",
                         [(e, c, k, r) for e, c, k, rs in CASES for r in rs])
def test_small_signal_agreement(est, channel, kind, r):
    assert _agreement(est, channel, kind, r) < 0.02


@pytest.mark.parametrize("est", [Estimator.CONVENTIONAL, Estimator.SRF_FLL0])
def test_underdamped_agreement_needs_finer_sampling(est):
    coarse = _agreement(est, "omega_hat", "ConvOmega", 2.0)
    fine = _agreement(est, "omega_hat", "ConvOmega", 2.0, fs=40_000.0)
    assert fine < 0.02 < coarse
    assert coarse / fine > 3.0


# --- suites ------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sweeps():
    return {s: paper_sweep(s) for s in Suite}


@pytest.mark.parametrize("suite, cells", [(Suite.FREQ_STEP_FIG5, 8), (Suite.PHASE_STEP_FIG6, 8),
                                          (Suite.OPTIMAL_FIG7, 2), (Suite.DISTURBANCE_FIG8, 3)])
def test_suite_grid_and_checks(sweeps, suite, cells):
    rep = sweeps[suite]
    assert len(rep.cells) == cells
    assert all(set(c.metrics) == {"omega_hat", "omega_b"} for c in rep.cells)
    assert rep.checks and rep.passed, [c for c in rep.checks if not c[1]]


def test_fig5_orderings(sweeps):
    rep = sweeps[Suite.FREQ_STEP_FIG5]
    grid = (0.25, 0.5, 1.0, 2.0)
    settle = [rep.cell(Estimator.SRF_FLL, r).metrics["omega_hat"].settling_time for r in grid]
    over = [rep.cell(Estimator.CONVENTIONAL, r).metrics["omega_hat"].overshoot for r in grid]
    assert all(b < a for a, b in zip(settle, settle[1:]))
    assert all(b > a for a, b in zip(over, over[1:]))
    assert rep.cell(Estimator.SRF_FLL, 2.0).metrics["omega_b"].overshoot < 0.01
    assert rep.cell(Estimator.CONVENTIONAL, 2.0).metrics["omega_hat"].overshoot == pytest.approx(30.5, abs=3.0)
    assert rep.cell(Estimator.SRF_FLL, 1.0).metrics["omega_hat"].settling_time == pytest.approx(0.0104, abs=0.001)


def test_fig6_channel_selection(sweeps):
    rep = sweeps[Suite.PHASE_STEP_FIG6]
    for r in (0.25, 0.5, 1.0, 2.0):
        m = rep.cell(Estimator.SRF_FLL, r).metrics
        assert abs(m["omega_b"].peak_value - W0) < abs(m["omega_hat"].peak_value - W0)


def test_fig7_optimal_comparison(sweeps):
    rep = sweeps[Suite.OPTIMAL_FIG7]
    conv = rep.cell(Estimator.CONVENTIONAL, 0.5).metrics["omega_hat"]
    srf = rep.cell(Estimator.SRF_FLL, 1.0).metrics
    assert srf["omega_hat"].settling_time < conv.settling_time
    assert conv.overshoot == pytest.approx(4.33, abs=1.5)
    assert srf["omega_b"].overshoot < 0.01


def test_fig8_phase_jump_dq_voltage(sweeps):
    c = sweeps[Suite.DISTURBANCE_FIG8].cell(Estimator.SRF_FLL, 1.0, "phase_jump_+20deg")
    tr = c.trace
    i0 = tr.index_at(c.event_time)
    assert tr.u_q[i0] == pytest.approx(math.sin(math.radians(20)), abs=1e-3)
    assert tr.u_q[i0] == pytest.approx(0.342, abs=1e-3)
    assert np.max(np.abs(tr.u_q[tr.index_at(c.event_time + 0.1):])) < 0.01


def test_fig8_frequency_drop_follows_model(sweeps):
    c = sweeps[Suite.DISTURBANCE_FIG8].cell(Estimator.SRF_FLL, 1.0, "freq_step_-5Hz")
    tr = c.trace
    dw = -STEP
    i0 = tr.index_at(c.event_time)
    tau = tr.t[i0:] - tr.t[i0]
    # omega_b error decays by the second-order law
    oracle_b = dw * (ss.step_response(ss.build_tf("SrfOmegaB", K, K), tau) - 1)
    err_b = tr.omega_b[i0:] - tr.true_omega[i0:]
    assert np.max(np.abs(err_b)) == pytest.approx(np.max(np.abs(oracle_b)), rel=0.02)
    assert np.max(np.abs(err_b - oracle_b)) < 0.02 * abs(dw)
    # the phase difference sees k / ((s + k)(s + d)) applied to the frequency step
    tf = ss.RationalTf((K,), (K * K, 2 * K, 1.0))
    oracle_e = dw * ss.step_response(tf, tau)
    de = tr.theta_e_hat[i0:] - tr.theta_e_hat[i0 - 1]
    assert np.max(np.abs(de - oracle_e)) < 0.02 * abs(dw / K)


def test_sweep_is_thread_count_independent():
    a = paper_sweep(Suite.OPTIMAL_FIG7, threads=1)
    b = paper_sweep(Suite.OPTIMAL_FIG7, threads=4)
    for ca, cb in zip(a.cells, b.cells):
        assert (ca.estimator, ca.d_over_k) == (cb.estimator, cb.d_over_k)
        assert np.array_equal(ca.trace.outputs, cb.trace.outputs)


def test_sweep_reports_divergence(monkeypatch):
    def boom(cfg, backend=None):
        raise DivergenceError("boom", index=5)

    monkeypatch.setattr(harness, "run", boom)
    rep = paper_sweep(Suite.OPTIMAL_FIG7, threads=1)
    assert not rep.passed
    assert all(c.error and "sample 5" in c.error for c in rep.cells)


@pytest.mark.parametrize("value, expected", [("3", 3), ("0", None), ("junk", None), ("-2", None)])
def test_sweep_threads_env(monkeypatch, value, expected):
    monkeypatch.setenv("GRIDLOCK_THREADS", value)
    assert sweep_threads() == (expected or (__import__("os").cpu_count() or 1))
