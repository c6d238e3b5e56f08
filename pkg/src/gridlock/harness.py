"""Run estimators over scenarios, measure step metrics, reproduce comparison suites."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from . import _backend
from .fll import NOMINAL_OMEGA, DivergenceError, Estimator, FllConfigError, FllGains, TS_K_LIMIT
from .signals import (
    TWO_PI, GridScenario, amplitude_sag_scenario, angle_diff, frequency_step_scenario,
    phase_jump_scenario, synthesize_scenario, wrap_angle,
)
from ._kernels_py import OUT_COLUMNS

K_DEFAULT = 120.0 * math.pi
SETTLING_BAND = 0.02
WARMUP_DEFAULT = 0.2
# normalisation for return-to-value channels (e.g. frequency under a phase jump)
REFERENCE_STEP = TWO_PI * 5.0
D_OVER_K_GRID = (2.0, 1.0, 0.5, 0.25)
ANGLE_CHANNELS = frozenset({"theta_hat", "theta_e_hat", "theta_est", "true_theta"})
_COL = {name: i for i, name in enumerate(OUT_COLUMNS)}


@dataclass(frozen=True)
class RunConfig:
    estimator: Estimator
    gains: FllGains
    scenario: GridScenario
    warmup: float = WARMUP_DEFAULT
    adapt: bool = True
    omega0: float = NOMINAL_OMEGA

    def __post_init__(self):
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        ts = self.ts
        limit = max(self.gains.k, self.gains.d)
        if ts * limit >= TS_K_LIMIT:
            raise FllConfigError(f"Ts*max(k, d) = {ts * limit:.4g} must be < {TS_K_LIMIT}")
        if self.scenario.events and not self.warmup < self.scenario.events[0].time:
            raise FllConfigError("warmup must end before the first event")

    @property
    def ts(self) -> float:
        return self.scenario.ts


@dataclass
class RunTrace:
    config: RunConfig
    t: np.ndarray
    u_ab: np.ndarray
    true_v: np.ndarray
    true_omega: np.ndarray
    true_theta: np.ndarray
    outputs: np.ndarray  # (n, len(OUT_COLUMNS))
    backend: str = "python"

    def __len__(self) -> int:
        return len(self.t)

    def channel(self, name: str) -> np.ndarray:
        if name in _COL:
            return self.outputs[:, _COL[name]]
        extra = {
            "t": self.t, "u_alpha": self.u_ab.real, "u_beta": self.u_ab.imag,
            "true_v": self.true_v, "true_omega": self.true_omega, "true_theta": self.true_theta,
        }
        try:
            return extra[name]
        except KeyError:
            raise KeyError(f"unknown channel {name!r}") from None

    def __getattr__(self, name):
        if name in _COL:
            return self.outputs[:, _COL[name]]
        raise AttributeError(name)

    def index_at(self, time: float) -> int:
        """First sample index with ``t >= time``."""
        return int(np.searchsorted(self.t, time - 1e-12))

    @property
    def u_dq_est(self) -> np.ndarray:
        return self.channel("ud_est") + 1j * self.channel("uq_est")

    @property
    def x_a(self) -> np.ndarray:
        return self.channel("x_aR") + 1j * self.channel("x_aI")

    def event_times(self) -> list[float]:
        sc = self.config.scenario
        return [sc.event_time(ev) for ev in sc.events if sc.event_index(ev) < len(self.t)]


def initial_state(config: RunConfig) -> tuple:
    return (0.0, 0.0, float(config.omega0), wrap_angle(config.gains.theta0_hat), 0.0)


def run(config: RunConfig, backend: Optional[str] = None) -> RunTrace:
    """Simulate ``config`` and record every output channel at every sample.

    Raises :class:`~gridlock.fll.DivergenceError` carrying the sample index
    if any state goes non-finite.
    """
    sig = synthesize_scenario(config.scenario)
    kern = _backend.get(backend)
    n = len(sig)
    out = np.zeros((n, len(OUT_COLUMNS)))
    g = config.gains
    fail, _ = kern.run(
        config.estimator.code,
        np.ascontiguousarray(sig.u_ab.real), np.ascontiguousarray(sig.u_ab.imag),
        g.k, g.d, g.v_nom, config.ts, initial_state(config), bool(config.adapt), out,
    )
    if fail >= 0:
        raise DivergenceError(f"{config.estimator.value} diverged", index=fail)
    return RunTrace(config, sig.t, sig.u_ab, sig.v, sig.omega, sig.theta, out, _backend.name_of(kern))


@dataclass(frozen=True)
class StepMetrics:
    settling_time: float
    overshoot: float
    peak_value: float
    peak_time: float
    steady_state_error: float
    settled: bool = True
    residual: float = 0.0

    def as_row(self) -> dict:
        return {
            "settling_time_s": self.settling_time if self.settled else float("nan"),
            "overshoot_pct": self.overshoot,
            "peak_value": self.peak_value,
            "peak_time_s": self.peak_time,
            "steady_state_error": self.steady_state_error,
        }


def step_metrics(trace_or_t, channel_or_y, event_time: float, target: float,
                 scale: Optional[float] = None, band: float = SETTLING_BAND) -> StepMetrics:
    """Settling time, overshoot and peak of a channel after an event.

    Accepts either ``(trace, channel_name, ...)`` or raw ``(t, y, ...)``
    arrays. The step magnitude is ``|target - y_pre|`` with ``y_pre`` the
    last pre-event sample. When that is ~0 (a channel expected to return to
    its previous value) ``scale`` normalises overshoot and band and the
    overshoot is the peak absolute excursion. Settling time is measured to
    the last sample outside ``target +/- band*magnitude``; if the final
    sample is still outside, ``settled`` is False and ``residual`` holds the
    final deviation.
    """
    if isinstance(trace_or_t, RunTrace):
        t = trace_or_t.t
        y = trace_or_t.channel(channel_or_y)
        angle = channel_or_y in ANGLE_CHANNELS
    else:
        t = np.asarray(trace_or_t, dtype=float)
        y = np.asarray(channel_or_y, dtype=float)
        angle = False
    if not t[0] <= event_time <= t[-1]:
        raise ValueError("event_time outside trace")
    i0 = int(np.searchsorted(t, event_time - 1e-12))
    y_pre = y[i0 - 1] if i0 > 0 else y[0]
    tt = t[i0:]
    dev = angle_diff(y[i0:], target) if angle else y[i0:] - target
    pre_dev = angle_diff(y_pre, target) if angle else y_pre - target
    magnitude = abs(pre_dev)
    returning = magnitude <= 1e-12 * max(1.0, abs(target))
    if returning:
        if scale is None or not scale > 0:
            raise ValueError("return-to-value channel needs a positive scale")
        magnitude = scale
        j = int(np.argmax(np.abs(dev)))
        overshoot = 100.0 * abs(dev[j]) / magnitude
    else:
        direction = -math.copysign(1.0, pre_dev)
        signed = direction * dev
        j = int(np.argmax(signed))
        overshoot = 100.0 * max(0.0, float(signed[j])) / magnitude
    peak_value = float(y[i0 + j])
    peak_time = float(tt[j])

    outside = np.nonzero(np.abs(dev) > band * magnitude)[0]
    final_err = float(abs(dev[-1]))
    if outside.size == 0:
        settling, settled = 0.0, True
    elif outside[-1] == len(dev) - 1:
        settling, settled = float("inf"), False
    else:
        settling, settled = float(tt[outside[-1]] - event_time), True
    return StepMetrics(settling, overshoot, peak_value, peak_time, final_err, settled,
                       0.0 if settled else final_err)


def compare_traces(a: RunTrace, b: RunTrace, channel: str, start_time: float = 0.0) -> float:
    """Maximum absolute difference of a channel over two traces on the same grid."""
    if len(a.t) != len(b.t) or not np.array_equal(a.t, b.t):
        raise ValueError("traces have different time grids")
    i0 = a.index_at(start_time)
    ya = a.channel(channel)[i0:]
    yb = b.channel(channel)[i0:]
    diff = angle_diff(ya, yb) if channel in ANGLE_CHANNELS else ya - yb
    return float(np.max(np.abs(diff))) if diff.size else 0.0


# --- comparison suites ------------------------------------------------------

class Suite(str, Enum):
    FREQ_STEP_FIG5 = "FreqStepFig5"
    PHASE_STEP_FIG6 = "PhaseStepFig6"
    OPTIMAL_FIG7 = "OptimalFig7"
    DISTURBANCE_FIG8 = "DisturbanceFig8"


@dataclass
class CellResult:
    suite: str
    estimator: Estimator
    d_over_k: float
    scenario_label: str
    event_time: float
    trace: Optional[RunTrace]
    metrics: dict[str, StepMetrics] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class SweepReport:
    suite: Suite
    k: float
    cells: list[CellResult]
    checks: list[tuple[str, bool, str]]

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks) and not any(c.error for c in self.cells)

    def cell(self, estimator, d_over_k: float, label: Optional[str] = None) -> CellResult:
        est = Estimator(estimator)
        for c in self.cells:
            if c.estimator is est and math.isclose(c.d_over_k, d_over_k) and (
                    label is None or c.scenario_label == label):
                return c
        raise KeyError((estimator, d_over_k, label))


@dataclass(frozen=True)
class _CellSpec:
    estimator: Estimator
    d_over_k: float
    label: str
    scenario: GridScenario
    target: float
    scale: Optional[float]


def _suite_cells(suite: Suite) -> list[_CellSpec]:
    w0 = TWO_PI * 60.0
    fstep = frequency_step_scenario(5.0)
    pstep = phase_jump_scenario(math.radians(20.0))
    cells = []
    if suite is Suite.FREQ_STEP_FIG5:
        for est in (Estimator.CONVENTIONAL, Estimator.SRF_FLL):
            for r in D_OVER_K_GRID:
                cells.append(_CellSpec(est, r, "freq_step_+5Hz", fstep, w0 + REFERENCE_STEP, None))
    elif suite is Suite.PHASE_STEP_FIG6:
        for est in (Estimator.CONVENTIONAL, Estimator.SRF_FLL):
            for r in D_OVER_K_GRID:
                cells.append(_CellSpec(est, r, "phase_jump_+20deg", pstep, w0, REFERENCE_STEP))
    elif suite is Suite.OPTIMAL_FIG7:
        cells.append(_CellSpec(Estimator.CONVENTIONAL, 0.5, "freq_step_+5Hz", fstep, w0 + REFERENCE_STEP, None))
        cells.append(_CellSpec(Estimator.SRF_FLL, 1.0, "freq_step_+5Hz", fstep, w0 + REFERENCE_STEP, None))
    elif suite is Suite.DISTURBANCE_FIG8:
        cells.append(_CellSpec(Estimator.SRF_FLL, 1.0, "amplitude_sag_0.5pu", amplitude_sag_scenario(), w0,
                               REFERENCE_STEP))
        cells.append(_CellSpec(Estimator.SRF_FLL, 1.0, "freq_step_-5Hz", frequency_step_scenario(-5.0),
                               w0 - REFERENCE_STEP, None))
        cells.append(_CellSpec(Estimator.SRF_FLL, 1.0, "phase_jump_+20deg", pstep, w0, REFERENCE_STEP))
    return cells


def sweep_threads() -> int:
    try:
        n = int(os.environ.get("GRIDLOCK_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _run_cell(suite: Suite, spec: _CellSpec, k: float, theta0_hat: float,
              backend: Optional[str]) -> CellResult:
    gains = FllGains(k=k, d=spec.d_over_k * k, theta0_hat=theta0_hat)
    cfg = RunConfig(spec.estimator, gains, spec.scenario)
    ev_time = spec.scenario.event_time(spec.scenario.events[0])
    cell = CellResult(suite.value, spec.estimator, spec.d_over_k, spec.label, ev_time, None)
    try:
        trace = run(cfg, backend)
    except DivergenceError as exc:
        cell.error = str(exc)
        return cell
    cell.trace = trace
    for ch in ("omega_hat", "omega_b"):
        cell.metrics[ch] = step_metrics(trace, ch, ev_time, spec.target, spec.scale)
    return cell


def paper_sweep(suite: Suite | str, k: float = K_DEFAULT, theta0_hat: float = 0.0,
                backend: Optional[str] = None, threads: Optional[int] = None) -> SweepReport:
    """Run every cell of a comparison suite and check the expected orderings."""
    suite = Suite(suite)
    specs = _suite_cells(suite)
    nthreads = max(1, min(threads or sweep_threads(), len(specs)))
    if nthreads == 1:
        cells = [_run_cell(suite, s, k, theta0_hat, backend) for s in specs]
    else:
        with ThreadPoolExecutor(nthreads) as pool:
            cells = list(pool.map(lambda s: _run_cell(suite, s, k, theta0_hat, backend), specs))
    report = SweepReport(suite, k, cells, [])
    if not any(c.error for c in cells):
        report.checks = _CHECKS[suite](report)
    else:
        report.checks = [(f"no divergence in {c.estimator.value} d/k={c.d_over_k} {c.scenario_label}",
                          c.error is None, c.error or "") for c in cells]
    return report


def _strictly(values: Sequence[float], increasing: bool) -> bool:
    pairs = zip(values, values[1:])
    return all((b > a) if increasing else (b < a) for a, b in pairs)


def _checks_fig5(rep: SweepReport) -> list[tuple[str, bool, str]]:
    grid = sorted(D_OVER_K_GRID)
    srf_settle = [rep.cell(Estimator.SRF_FLL, r).metrics["omega_hat"].settling_time for r in grid]
    conv_os = [rep.cell(Estimator.CONVENTIONAL, r).metrics["omega_hat"].overshoot for r in grid]
    srf_b_os = [rep.cell(Estimator.SRF_FLL, r).metrics["omega_b"].overshoot for r in grid]
    conv_b_os = [rep.cell(Estimator.CONVENTIONAL, r).metrics["omega_b"].overshoot for r in grid]
    better_damped = [b <= c + 1e-9 for b, c in zip(srf_b_os, conv_b_os)]
    return [
        ("SrfFll omega_hat settling strictly decreasing in d", _strictly(srf_settle, False),
         _fmt(grid, srf_settle, "s")),
        ("Conventional overshoot strictly increasing in d", _strictly(conv_os, True),
         _fmt(grid, conv_os, "%")),
        ("SrfFll omega_b overshoot < 1% for every d", max(srf_b_os) < 1.0, _fmt(grid, srf_b_os, "%")),
        ("SrfFll omega_b overshoot <= Conventional overshoot at every d", all(better_damped),
         _fmt(grid, conv_b_os, "% (conventional)")),
    ]


def _checks_fig6(rep: SweepReport) -> list[tuple[str, bool, str]]:
    grid = sorted(D_OVER_K_GRID)
    out = []
    for r in grid:
        c = rep.cell(Estimator.SRF_FLL, r)
        pb = abs(c.metrics["omega_b"].peak_value - TWO_PI * 60.0)
        ph = abs(c.metrics["omega_hat"].peak_value - TWO_PI * 60.0)
        out.append((f"SrfFll d/k={r}: omega_b excursion < omega_hat excursion", pb < ph,
                    f"{pb:.3f} vs {ph:.3f} rad/s"))
    return out


def _checks_fig7(rep: SweepReport) -> list[tuple[str, bool, str]]:
    conv = rep.cell(Estimator.CONVENTIONAL, 0.5).metrics["omega_hat"]
    srf = rep.cell(Estimator.SRF_FLL, 1.0).metrics
    return [
        ("SrfFll omega_hat settles before Conventional (d=0.5k)",
         srf["omega_hat"].settling_time < conv.settling_time,
         f"{srf['omega_hat'].settling_time * 1e3:.2f} ms vs {conv.settling_time * 1e3:.2f} ms"),
        ("Conventional shows a small overshoot (1%..10%)", 1.0 < conv.overshoot < 10.0,
         f"{conv.overshoot:.2f}%"),
        ("SrfFll omega_b has no overshoot (< 1%)", srf["omega_b"].overshoot < 1.0,
         f"{srf['omega_b'].overshoot:.3f}%"),
    ]


def _checks_fig8(rep: SweepReport) -> list[tuple[str, bool, str]]:
    out = []
    for c in rep.cells:
        tr = c.trace
        i_end = len(tr) - 1
        w_err = abs(tr.channel("omega_hat")[i_end] - tr.true_omega[i_end])
        est_err = abs(tr.u_dq_est[i_end] - tr.true_v[i_end])
        out.append((f"{c.scenario_label}: re-locked at end of run", w_err < 1e-3 and est_err < 1e-3,
                    f"|dw|={w_err:.2e} rad/s, |u_dq_est-V|={est_err:.2e}"))
    ph = rep.cell(Estimator.SRF_FLL, 1.0, "phase_jump_+20deg")
    tr = ph.trace
    i0 = tr.index_at(ph.event_time)
    i1 = tr.index_at(ph.event_time + 0.1)
    jump = tr.channel("u_q")[i0]
    after = np.max(np.abs(tr.channel("u_q")[i1:]))
    out.append(("phase jump: u_q jumps to sin(20 deg) and decays below 0.01 within 0.1 s",
                abs(jump - math.sin(math.radians(20.0))) < 0.01 and after < 0.01,
                f"u_q(event)={jump:.4f}, max|u_q| after 0.1 s={after:.2e}"))
    return out


def _fmt(grid, vals, unit):
    return ", ".join(f"d={r}k: {v:.4g}{unit}" for r, v in zip(grid, vals))


_CHECKS: dict[Suite, Callable[[SweepReport], list]] = {
    Suite.FREQ_STEP_FIG5: _checks_fig5,
    Suite.PHASE_STEP_FIG6: _checks_fig6,
    Suite.OPTIMAL_FIG7: _checks_fig7,
    Suite.DISTURBANCE_FIG8: _checks_fig8,
}
