"""Positive-sequence grid voltage synthesis and frame rotation.

The generated voltage is the complex phasor ``u_ab = V * exp(j*theta)`` with
scripted frequency steps, phase jumps and amplitude changes. Events snap to
the first sample at or after their nominal time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np

TWO_PI = 2.0 * math.pi


class ScenarioError(ValueError):
    """Raised for a scenario that violates its invariants."""


def wrap_angle(x: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    w = math.remainder(x, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


def wrap_angles(x: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    w = np.remainder(np.asarray(x, dtype=float) + math.pi, TWO_PI) - math.pi
    # remainder maps onto [-pi, pi); move the left edge to the right
    w[w <= -math.pi] += TWO_PI
    return w


def angle_diff(a, b):
    """Wrap-aware difference ``a - b`` in (-pi, pi]."""
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        return wrap_angle(float(a) - float(b))
    return wrap_angles(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def park_transform(u_ab: complex, angle: float) -> complex:
    """Rotate a stationary-frame phasor into the frame at ``angle``.

    Multiplies by ``exp(-j*angle)``, computed with explicit trig.
    """
    u_ab = complex(u_ab)
    if not (math.isfinite(u_ab.real) and math.isfinite(u_ab.imag) and math.isfinite(angle)):
        raise ValueError("park_transform: non-finite input")
    c = math.cos(angle)
    s = math.sin(angle)
    return complex(u_ab.real * c + u_ab.imag * s, u_ab.imag * c - u_ab.real * s)


@dataclass(frozen=True)
class GridParams:
    amplitude: float = 1.0
    frequency: float = 60.0
    initial_phase: float = 0.0

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ScenarioError(f"amplitude must be > 0, got {self.amplitude}")
        if not self.frequency > 0:
            raise ScenarioError(f"frequency must be > 0, got {self.frequency}")


@dataclass(frozen=True)
class FrequencyStep:
    df_hz: float


@dataclass(frozen=True)
class PhaseJump:
    dtheta_rad: float


@dataclass(frozen=True)
class AmplitudeChange:
    v_new: float

    def __post_init__(self):
        if not self.v_new > 0:
            raise ScenarioError(f"AmplitudeChange.v_new must be > 0, got {self.v_new}")


EventKind = Union[FrequencyStep, PhaseJump, AmplitudeChange]


@dataclass(frozen=True)
class GridEvent:
    time: float
    kind: EventKind

    def __post_init__(self):
        if not self.time >= 0:
            raise ScenarioError(f"event time must be >= 0, got {self.time}")


@dataclass(frozen=True)
class GridScenario:
    initial: GridParams = field(default_factory=GridParams)
    events: tuple[GridEvent, ...] = ()
    duration: float = 0.5
    sample_rate: float = 10_000.0

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.duration > 0:
            raise ScenarioError("duration must be > 0")
        if not self.sample_rate >= 20.0 * self.initial.frequency:
            raise ScenarioError(
                f"sample_rate {self.sample_rate} Hz below 20x the grid frequency"
            )
        last = -math.inf
        for ev in self.events:
            if not ev.time > last:
                raise ScenarioError("event times must be strictly increasing")
            if not ev.time < self.duration:
                raise ScenarioError(f"event at {ev.time} s is not before duration {self.duration} s")
            last = ev.time

    @property
    def ts(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def event_index(self, ev: GridEvent) -> int:
        """Sample index an event snaps to (first sample at or after ``ev.time``)."""
        x = ev.time * self.sample_rate
        n = int(math.ceil(x - 1e-9 * max(1.0, abs(x))))
        return max(n, 0)

    def event_time(self, ev: GridEvent) -> float:
        return self.event_index(ev) * self.ts


@dataclass(frozen=True)
class GroundTruth:
    V: float
    omega: float
    theta: float


@dataclass(frozen=True)
class GridSignal:
    """Sampled scenario: time grid, stationary-frame voltage and ground truth."""

    t: np.ndarray
    u_ab: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    theta: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[tuple[float, complex, GroundTruth]]:
        for i in range(len(self.t)):
            yield self[i]

    def __getitem__(self, i: int) -> tuple[float, complex, GroundTruth]:
        return (
            float(self.t[i]),
            complex(self.u_ab[i]),
            GroundTruth(float(self.v[i]), float(self.omega[i]), float(self.theta[i])),
        )


def synthesize_scenario(scenario: GridScenario) -> GridSignal:
    """Sample the grid voltage of ``scenario``.

    Phase is piecewise linear between events, so it stays continuous across
    frequency steps and amplitude changes; only phase jumps introduce a
    discontinuity. A frequency step at sample ``n`` sets the reported
    frequency from ``n`` onward while the phase at ``n`` still lies on the
    previous ramp.
    """
    n = scenario.n_samples
    ts = scenario.ts
    idx = np.arange(n)
    t = idx * ts

    v = np.empty(n)
    omega = np.empty(n)
    theta_unwrapped_rel = np.empty(n)
    theta_offset = np.empty(n)

    cur_v = scenario.initial.amplitude
    cur_w = TWO_PI * scenario.initial.frequency
    seg_start = 0
    seg_theta = scenario.initial.initial_phase

    boundaries = [(scenario.event_index(ev), ev) for ev in scenario.events]
    boundaries = [(i, ev) for i, ev in boundaries if i < n]

    def fill(stop: int):
        sl = slice(seg_start, stop)
        v[sl] = cur_v
        omega[sl] = cur_w
        theta_unwrapped_rel[sl] = cur_w * (idx[sl] - seg_start) * ts
        theta_offset[sl] = seg_theta

    for i_ev, ev in boundaries:
        fill(i_ev)
        # phase reached at the event sample on the outgoing ramp
        seg_theta = wrap_angle(seg_theta + cur_w * (i_ev - seg_start) * ts)
        seg_start = i_ev
        kind = ev.kind
        if isinstance(kind, FrequencyStep):
            cur_w = cur_w + TWO_PI * kind.df_hz
        elif isinstance(kind, PhaseJump):
            seg_theta = wrap_angle(seg_theta + kind.dtheta_rad)
        elif isinstance(kind, AmplitudeChange):
            cur_v = kind.v_new
        else:  # pragma: no cover
            raise ScenarioError(f"unknown event kind {kind!r}")
    fill(n)

    theta = wrap_angles(theta_offset + theta_unwrapped_rel)
    u_ab = v * (np.cos(theta) + 1j * np.sin(theta))
    return GridSignal(t=t, u_ab=u_ab, v=v, omega=omega, theta=theta)


# --- JSON scenario format -------------------------------------------------

def _event_from_dict(d: dict) -> GridEvent:
    kind = d.get("kind")
    t = float(d["t_s"])
    if kind == "freq_step":
        return GridEvent(t, FrequencyStep(float(d["df_hz"])))
    if kind == "phase_jump":
        if "dtheta_deg" in d:
            return GridEvent(t, PhaseJump(math.radians(float(d["dtheta_deg"]))))
        return GridEvent(t, PhaseJump(float(d["dtheta_rad"])))
    if kind == "amp_change":
        return GridEvent(t, AmplitudeChange(float(d["v_new"])))
    raise ScenarioError(f"unknown event kind {kind!r}")


def _event_to_dict(ev: GridEvent) -> dict:
    k = ev.kind
    if isinstance(k, FrequencyStep):
        return {"t_s": ev.time, "kind": "freq_step", "df_hz": k.df_hz}
    if isinstance(k, PhaseJump):
        return {"t_s": ev.time, "kind": "phase_jump", "dtheta_deg": math.degrees(k.dtheta_rad)}
    return {"t_s": ev.time, "kind": "amp_change", "v_new": k.v_new}


def scenario_from_dict(d: dict) -> GridScenario:
    try:
        init = d.get("initial", {})
        if "theta0_deg" in init:
            theta0 = math.radians(float(init["theta0_deg"]))
        else:
            theta0 = float(init.get("theta0_rad", 0.0))
        params = GridParams(
            amplitude=float(init.get("v", 1.0)),
            frequency=float(init.get("f_hz", 60.0)),
            initial_phase=theta0,
        )
        events = tuple(_event_from_dict(e) for e in d.get("events", []))
        return GridScenario(
            initial=params,
            events=events,
            duration=float(d.get("duration_s", 0.5)),
            sample_rate=float(d.get("sample_rate_hz", 10_000.0)),
        )
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def scenario_to_dict(s: GridScenario) -> dict:
    return {
        "initial": {
            "v": s.initial.amplitude,
            "f_hz": s.initial.frequency,
            "theta0_rad": s.initial.initial_phase,
        },
        "duration_s": s.duration,
        "sample_rate_hz": s.sample_rate,
        "events": [_event_to_dict(e) for e in s.events],
    }


def load_scenario(path: Union[str, Path]) -> GridScenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def frequency_step_scenario(df_hz: float, t_event: float = 0.25, duration: float = 0.5,
                            f_hz: float = 60.0, v: float = 1.0, theta0: float = 0.0,
                            sample_rate: float = 10_000.0) -> GridScenario:
    return GridScenario(GridParams(v, f_hz, theta0),
                        (GridEvent(t_event, FrequencyStep(df_hz)),), duration, sample_rate)


def phase_jump_scenario(dtheta_rad: float, t_event: float = 0.25, duration: float = 0.5,
                        f_hz: float = 60.0, v: float = 1.0, theta0: float = 0.0,
                        sample_rate: float = 10_000.0) -> GridScenario:
    return GridScenario(GridParams(v, f_hz, theta0),
                        (GridEvent(t_event, PhaseJump(dtheta_rad)),), duration, sample_rate)


def amplitude_sag_scenario(v_sag: float = 0.5, t_event: float = 0.25, hold: float = 0.15,
                           duration: float = 0.7, f_hz: float = 60.0,
                           sample_rate: float = 10_000.0) -> GridScenario:
    events: Sequence[GridEvent] = (
        GridEvent(t_event, AmplitudeChange(v_sag)),
        GridEvent(t_event + hold, AmplitudeChange(1.0)),
    )
    return GridScenario(GridParams(1.0, f_hz, 0.0), tuple(events), duration, sample_rate)
