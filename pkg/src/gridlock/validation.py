"""Release acceptance checks, shared by ``gridlock validate`` and the test suite."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from . import small_signal as ss
from .fll import DivergenceError, Estimator, FllGains
from .harness import (
    D_OVER_K_GRID, K_DEFAULT, RunConfig, RunTrace, Suite, compare_traces, paper_sweep, run,
    step_metrics,
)
from .signals import (
    TWO_PI, GridParams, GridScenario, amplitude_sag_scenario, angle_diff,
    frequency_step_scenario, phase_jump_scenario,
)

K = K_DEFAULT
STEP_HZ = 5.0
STEP = TWO_PI * STEP_HZ
W0 = TWO_PI * 60.0


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.detail}"


def _run(est, gains: FllGains, scenario: GridScenario, backend, **kw) -> RunTrace:
    tr = run(RunConfig(est, gains, scenario, **kw), backend)
    if not np.all(np.isfinite(tr.outputs)):
        raise DivergenceError("non-finite output in trace")
    return tr


def _post(tr: RunTrace, t_event: float):
    i0 = tr.index_at(t_event)
    return i0, tr.t[i0:] - tr.t[i0]


def equivalence(backend=None) -> tuple[bool, str]:
    gains = FllGains(K, 0.5 * K)
    diffs = []
    for fs in (10_000.0, 20_000.0):
        sc = frequency_step_scenario(STEP_HZ, sample_rate=fs)
        a = _run(Estimator.SRF_FLL0, gains, sc, backend)
        b = _run(Estimator.CONVENTIONAL, gains, sc, backend)
        # both are locked by the end of the warmup; compare from there on
        diffs.append(compare_traces(a, b, "omega_hat", start_time=a.config.warmup))
    ratio = diffs[0] / diffs[1] if diffs[1] > 0 else math.inf
    ok = diffs[0] < 0.005 * STEP and ratio >= 1.8
    return ok, (f"max|dw| = {diffs[0]:.4f} rad/s (< {0.005 * STEP:.4f}) at Ts=1e-4, "
                f"{diffs[1]:.4f} at Ts=5e-5, ratio {ratio:.2f} (>= 1.8)")


def first_order(backend=None) -> tuple[bool, str]:
    sc = frequency_step_scenario(STEP_HZ)
    tr = _run(Estimator.SRF_FLL, FllGains(K, K), sc, backend)
    te = sc.event_time(sc.events[0])
    i0, tau = _post(tr, te)
    oracle = W0 + STEP * ss.step_response(ss.build_tf(ss.TfKind.SRF_OMEGA, K, K), tau)
    err = np.max(np.abs(tr.omega_hat[i0:] - oracle)) / STEP
    m = step_metrics(tr, "omega_hat", te, W0 + STEP)
    expected = math.log(50.0) / K
    ok = err < 0.02 and abs(m.settling_time - expected) <= 0.2 * expected
    return ok, (f"max error {100 * err:.3f}% of step (< 2%), settling {m.settling_time * 1e3:.2f} ms "
                f"(expected {expected * 1e3:.2f} ms +/- 20%)")


def second_order(backend=None) -> tuple[bool, str]:
    sc = frequency_step_scenario(STEP_HZ)
    tr = _run(Estimator.SRF_FLL, FllGains(K, K), sc, backend)
    te = sc.event_time(sc.events[0])
    i0, tau = _post(tr, te)
    oracle = W0 + STEP * ss.step_response(ss.build_tf(ss.TfKind.SRF_OMEGA_B, K, K), tau)
    err = np.max(np.abs(tr.omega_b[i0:] - oracle)) / STEP
    m = step_metrics(tr, "omega_b", te, W0 + STEP)
    ok = err < 0.02 and m.overshoot < 1.0
    return ok, f"max error {100 * err:.3f}% of step (< 2%), overshoot {m.overshoot:.3f}% (< 1%)"


def conventional_damping(backend=None) -> tuple[bool, str]:
    expect = {0.5: (4.33, 1.5), 1.0: (16.3, 2.0), 2.0: (30.5, 3.0)}
    sc = frequency_step_scenario(STEP_HZ)
    te = sc.event_time(sc.events[0])
    parts, ok = [], True
    for r, (target, tol) in expect.items():
        tr = _run(Estimator.CONVENTIONAL, FllGains(K, r * K), sc, backend)
        os_ = step_metrics(tr, "omega_hat", te, W0 + STEP).overshoot
        ok &= abs(os_ - target) <= tol
        parts.append(f"d={r}k: {os_:.2f}% ({target}+/-{tol})")
    return ok, ", ".join(parts)


def damping_non_deterioration(backend=None) -> tuple[bool, str]:
    sc = frequency_step_scenario(STEP_HZ)
    te = sc.event_time(sc.events[0])
    grid = sorted(D_OVER_K_GRID)
    mets = [step_metrics(_run(Estimator.SRF_FLL, FllGains(K, r * K), sc, backend), "omega_b", te, W0 + STEP)
            for r in grid]
    overs = [m.overshoot for m in mets]
    settle = [m.settling_time for r, m in zip(grid, mets) if r <= 1.0]
    decreasing = all(b < a for a, b in zip(settle, settle[1:]))
    ok = max(overs) < 1.0 and decreasing
    return ok, ("omega_b overshoot " + ", ".join(f"{o:.2g}%" for o in overs)
                + "; settling up to d=k " + ", ".join(f"{s * 1e3:.1f} ms" for s in settle))


def steady_state_aux(backend=None) -> tuple[bool, str]:
    w_e = TWO_PI * 5.0
    duration = 0.05  # > 10/k
    sc = GridScenario(GridParams(1.0, 65.0, 0.0), (), duration, 10_000.0)
    tr = _run(Estimator.SRF_FLL0, FllGains(K, 0.5 * K), sc, backend, adapt=False, omega0=TWO_PI * 65.0 - w_e)
    i = tr.index_at(10.0 / K)
    expected = ss.steady_state_aux(K, w_e, 1.0)
    xa = tr.x_a[i:]
    er = np.max(np.abs(xa.real - expected.real)) / abs(expected.real)
    ei = np.max(np.abs(xa.imag - expected.imag)) / abs(expected.imag)
    ok = er < 1e-3 and ei < 1e-3
    return ok, (f"x_a -> {xa[-1].real:.5f}{xa[-1].imag:+.5f}j vs {expected.real:.5f}{expected.imag:+.5f}j; "
                f"rel err {er:.1e}, {ei:.1e} (< 1e-3) from t = 10/k")


def bode(backend=None) -> tuple[bool, str]:
    srf = ss.build_tf(ss.TfKind.SRF_OMEGA_B, K, K)
    conv = ss.build_tf(ss.TfKind.CONV_OMEGA, K, K)
    ms, mc = ss.bode_magnitude(srf, [K])[0], ss.bode_magnitude(conv, [K])[0]
    w = np.logspace(math.log10(K), math.log10(1000 * K), 400)
    dominated = bool(np.all(ss.bode_magnitude(srf, w) <= ss.bode_magnitude(conv, w)))
    ok = abs(ms - 0.5) < 1e-9 and abs(mc - 1.0) < 1e-9 and dominated
    return ok, f"|SrfOmegaB(jk)| = {ms:.12f}, |ConvOmega(jk)| = {mc:.12f}, SRF <= Conv on [k, 1000k]: {dominated}"


def phase_step(backend=None) -> tuple[bool, str]:
    dth = math.radians(20.0)
    sc = phase_jump_scenario(dth)
    tr = _run(Estimator.SRF_FLL, FllGains(K, K), sc, backend)
    te = sc.event_time(sc.events[0])
    i0 = tr.index_at(te)
    spike = tr.omega_hat[i0] - tr.omega_hat[i0 - 1]
    expected = K * math.sin(dth)
    peak_hat = np.max(np.abs(tr.omega_hat[i0:] - W0))
    peak_b = np.max(np.abs(tr.omega_b[i0:] - W0))
    i1 = tr.index_at(te + 0.1)
    th_err = np.max(np.abs(angle_diff(tr.theta_est[i1:], tr.true_theta[i1:])))
    ok = abs(spike - expected) <= 0.05 * expected and peak_b < peak_hat and th_err < math.radians(0.5)
    return ok, (f"omega_hat jump {spike:.2f} rad/s (expected {expected:.2f} +/- 5%), "
                f"peak omega_b {peak_b:.2f} < omega_hat {peak_hat:.2f}, "
                f"theta_est error after 0.1 s {math.degrees(th_err):.2e} deg (< 0.5)")


def synchronized_output(backend=None) -> tuple[bool, str]:
    worst = 0.0
    where = ""
    count = 0
    for theta0 in (0.0, math.pi / 4, -math.pi / 2):
        for suite in Suite:
            rep = paper_sweep(suite, theta0_hat=theta0, backend=backend)
            for c in rep.cells:
                if c.error:
                    raise DivergenceError(f"{suite.value} {c.estimator.value}: {c.error}")
                tr = c.trace
                e = tr.u_dq_est[-1] - tr.true_v[-1]
                err = max(abs(e.real), abs(e.imag))
                count += 1
                if err >= worst:
                    worst, where = err, f"{suite.value}/{c.estimator.value}/d={c.d_over_k}k/theta0={theta0:.3f}"
    return worst < 1e-3, f"{count} runs, worst |u_dq_est - V| component {worst:.2e} (< 1e-3) at {where}"


def guideline_grid(backend=None, n: int = 100, seed: int = 20190601) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    ks = rng.uniform(10.0, 2000.0, n)
    ratios = rng.uniform(0.05, 2.0, n)
    # pin a few draws on the regime boundaries
    ratios[:4] = (0.25, 0.5, 0.25, 0.5)
    tol = 1e-9
    bad = []
    for k, r in zip(ks, ratios):
        d = r * k
        tf = ss.build_tf(ss.TfKind.CONV_OMEGA, k, d)
        ch = ss.characteristic(tf)
        z = ch.zeta
        checks = []
        if d <= 0.25 * k:
            checks.append(z >= 1.0 - tol)
        if d <= 0.5 * k:
            checks.append(z >= 1.0 / math.sqrt(2.0) - tol)
        else:
            checks.append(z < 1.0 / math.sqrt(2.0) + tol)
        checks.append(abs(ch.zeta * ch.omega_n - 0.5 * k) <= tol * k)
        checks.append(all(ss.residual(tf, p) < tol for p in ch.poles))
        if not all(checks):
            bad.append((k, d, z))
    return not bad, f"{n} (k, d) pairs, {len(bad)} violations" + (f": {bad[:3]}" if bad else "")


def robustness(backend=None) -> tuple[bool, str]:
    sc = amplitude_sag_scenario(0.5, duration=0.8)
    t_last = sc.event_time(sc.events[-1])
    parts, ok = [], True
    for est in Estimator:
        tr = _run(est, FllGains(K, K), sc, backend)
        bad = (np.abs(tr.omega_hat - tr.true_omega) >= 1e-3) | (np.abs(tr.u_dq_est - tr.true_v) >= 1e-3)
        bad[: tr.index_at(t_last)] = False
        idx = np.nonzero(bad)[0]
        relock = 0.0 if idx.size == 0 else tr.t[idx[-1]] - t_last
        this_ok = relock < 0.3 and not bad[-1]
        ok &= this_ok
        parts.append(f"{est.value} re-lock {relock * 1e3:.1f} ms")
    return ok, ", ".join(parts) + " (< 300 ms, all states finite)"


CRITERIA: dict[str, tuple[int, Callable[..., tuple[bool, str]]]] = {
    "equivalence": (1, equivalence),
    "first_order": (2, first_order),
    "second_order": (3, second_order),
    "conventional_damping": (4, conventional_damping),
    "damping_non_deterioration": (5, damping_non_deterioration),
    "steady_state_aux": (6, steady_state_aux),
    "bode": (7, bode),
    "phase_step": (8, phase_step),
    "synchronized_output": (9, synchronized_output),
    "guideline_grid": (10, guideline_grid),
    "robustness": (11, robustness),
}


def evaluate(name: str, backend: Optional[str] = None) -> CriterionResult:
    """Run one criterion; numerical divergence counts as a failure."""
    number, fn = CRITERIA[name]
    try:
        ok, detail = fn(backend)
    except DivergenceError as exc:
        return CriterionResult(number, name, False, f"diverged: {exc}")
    return CriterionResult(number, name, bool(ok), detail)


def run_all(names: Optional[Iterable[str]] = None, backend: Optional[str] = None) -> list[CriterionResult]:
    selected = list(CRITERIA) if names is None else list(names)
    unknown = [n for n in selected if n not in CRITERIA]
    if unknown:
        raise KeyError(f"unknown criterion: {', '.join(unknown)}")
    return [evaluate(n, backend) for n in selected]
