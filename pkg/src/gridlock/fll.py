"""Frequency-locked loop estimators as fixed-step discrete-time state machines.

Three estimators share one output record:

* ``conv_fll_step``: stationary-frame ROGI-FLL.
* ``srf_fll0_step``: synchronous-frame FLL with a complex low-pass filter,
  the dq image of the ROGI-FLL.
* ``srf_fll_step``: the synchronous-frame FLL that adds the q-axis filter
  error ``e_q`` as a proportional feedthrough to the frequency estimate.

All derivative updates are single forward-Euler steps. Frame rotations are
evaluated exactly with ``cos``/``sin``. The arithmetic is written out in real
operations so that the compiled kernels in :mod:`gridlock._kernels` reproduce
it bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

from .signals import wrap_angle

NOMINAL_OMEGA = 2.0 * math.pi * 60.0
EPS_MAG_REL = 1e-6
TS_K_LIMIT = 0.5


class Estimator(str, Enum):
    CONVENTIONAL = "Conventional"
    SRF_FLL0 = "SrfFll0"
    SRF_FLL = "SrfFll"

    @property
    def code(self) -> int:
        return _CODES[self]


_CODES = {Estimator.CONVENTIONAL: 0, Estimator.SRF_FLL0: 1, Estimator.SRF_FLL: 2}


class FllError(Exception):
    pass


class FllConfigError(FllError, ValueError):
    """Gains or sample period outside the supported range."""


class DivergenceError(FllError, ArithmeticError):
    """A state or output went non-finite."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (sample {index})")
        self.index = index


@dataclass(frozen=True)
class FllGains:
    """Tuning shared by all estimators.

    ``k`` is the ROGI / low-pass gain and ``d`` the frequency-loop design
    gain, both in rad/s. The integral gain is derived as ``k*d/v_nom**2``.
    """

    k: float = 120.0 * math.pi
    # d = 0.5k keeps the improved loop damped for any initial phase error
    d: float = 60.0 * math.pi
    v_nom: float = 1.0
    theta0_hat: float = 0.0

    def __post_init__(self):
        for name in ("k", "d", "v_nom"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise FllConfigError(f"{name} must be finite and > 0, got {val}")
        if not math.isfinite(self.theta0_hat):
            raise FllConfigError("theta0_hat must be finite")

    @property
    def integral_gain(self) -> float:
        return self.k * self.d / (self.v_nom * self.v_nom)

    @property
    def eps_mag(self) -> float:
        return EPS_MAG_REL * self.v_nom


@dataclass(frozen=True)
class ConvFllState:
    u_hat_ab: complex = 0j
    omega_hat: float = NOMINAL_OMEGA
    # angle integrated from omega_hat; only used for the dq-frame outputs
    theta_hat: float = 0.0
    theta_e_hat: float = 0.0

    @classmethod
    def initial(cls, gains: FllGains, omega0: float = NOMINAL_OMEGA) -> "ConvFllState":
        return cls(0j, omega0, wrap_angle(gains.theta0_hat), 0.0)


@dataclass(frozen=True)
class SrfFllState:
    u_hat_dq: complex = 0j
    omega_b: float = NOMINAL_OMEGA
    theta_hat: float = 0.0
    # last valid phase-difference estimate, held while |u_hat_dq| is tiny
    theta_e_hat: float = 0.0

    @classmethod
    def initial(cls, gains: FllGains, omega0: float = NOMINAL_OMEGA) -> "SrfFllState":
        return cls(0j, omega0, wrap_angle(gains.theta0_hat), 0.0)


@dataclass(frozen=True)
class FllOutputs:
    omega_hat: float
    omega_b: float
    theta_hat: float
    u_dq: complex
    u_hat_dq: complex
    x_a: complex
    e_q: float
    theta_e_hat: float
    theta_est: float
    u_dq_est: complex


class PhaseOutputs(NamedTuple):
    theta_e_hat: float
    theta_est: float
    u_dq_est: complex
    defined: bool


def aux_variable(u_dq: complex, u_hat_dq: complex) -> complex:
    """Return ``u_dq * conj(u_hat_dq)``."""
    a = complex(u_dq)
    b = complex(u_hat_dq)
    return complex(a.real * b.real + a.imag * b.imag, a.imag * b.real - a.real * b.imag)


def _phase(theta_hat: float, uhd: float, uhq: float, ua_r: float, ua_i: float,
           held: float, eps_mag: float) -> PhaseOutputs:
    defined = math.sqrt(uhd * uhd + uhq * uhq) > eps_mag
    theta_e = math.atan2(uhq, uhd) if defined else held
    if theta_e <= -math.pi:
        theta_e = math.pi
    theta_est = wrap_angle(theta_hat + theta_e)
    c = math.cos(theta_est)
    s = math.sin(theta_est)
    return PhaseOutputs(theta_e, theta_est,
                        complex(ua_r * c + ua_i * s, ua_i * c - ua_r * s), defined)


def phase_outputs(state: SrfFllState, u_ab: complex, gains: FllGains | None = None) -> PhaseOutputs:
    """Phase difference, reconstructed grid angle and grid-oriented dq voltage.

    The phase difference is the four-quadrant angle of ``u_hat_dq``. When
    ``|u_hat_dq|`` is at or below ``1e-6 * v_nom`` the angle is undefined:
    ``defined`` is False and the last valid value held in ``state`` is used.
    """
    eps = (gains or FllGains()).eps_mag
    u_ab = complex(u_ab)
    uh = state.u_hat_dq
    return _phase(state.theta_hat, uh.real, uh.imag, u_ab.real, u_ab.imag,
                  state.theta_e_hat, eps)


def _check_step(gains: FllGains, ts: float, u_ab: complex, extra_limit: float = 0.0):
    if not (ts > 0 and math.isfinite(ts)):
        raise FllConfigError(f"sample period must be > 0, got {ts}")
    if ts * max(gains.k, extra_limit) >= TS_K_LIMIT:
        raise FllConfigError(
            f"Ts*gain = {ts * max(gains.k, extra_limit):.4g} violates the explicit-integration limit {TS_K_LIMIT}")
    if not (math.isfinite(u_ab.real) and math.isfinite(u_ab.imag)):
        raise DivergenceError("non-finite input sample")


def _check_finite(*vals: float):
    for v in vals:
        if not math.isfinite(v):
            raise DivergenceError("estimator state diverged")


def conv_fll_step(state: ConvFllState, gains: FllGains, u_ab: complex, ts: float,
                  adapt: bool = True) -> tuple[ConvFllState, FllOutputs]:
    """One step of the stationary-frame ROGI-FLL.

    The ROGI rotation term ``j*omega_hat*u_hat`` is integrated exactly as a
    rotation by ``omega_hat*Ts`` and the injection ``k*(u - u_hat)`` by
    Euler, which keeps the locked fixed point at ``omega_hat == omega``.
    Set ``adapt=False`` to freeze the frequency estimate.
    """
    u_ab = complex(u_ab)
    _check_step(gains, ts, u_ab)
    ua_r, ua_i = u_ab.real, u_ab.imag
    uh_r, uh_i = state.u_hat_ab.real, state.u_hat_ab.imag
    th = state.theta_hat
    w = state.omega_hat
    _check_finite(uh_r, uh_i, w, th)

    c = math.cos(th)
    s = math.sin(th)
    ud = ua_r * c + ua_i * s
    uq = ua_i * c - ua_r * s
    uhd = uh_r * c + uh_i * s
    uhq = uh_i * c - uh_r * s
    xr = ua_r * uh_r + ua_i * uh_i
    xi = ua_i * uh_r - ua_r * uh_i
    eq = uq - uhq
    ph = _phase(th, uhd, uhq, ua_r, ua_i, state.theta_e_hat, gains.eps_mag)

    kts = gains.k * ts
    cw = math.cos(w * ts)
    sw = math.sin(w * ts)
    nr = (uh_r * cw - uh_i * sw) + kts * (ua_r - uh_r)
    ni = (uh_r * sw + uh_i * cw) + kts * (ua_i - uh_i)
    nw = w + ts * gains.integral_gain * xi if adapt else w
    nth = wrap_angle(th + w * ts)
    _check_finite(nr, ni, nw, nth)

    out = FllOutputs(w, w, th, complex(ud, uq), complex(uhd, uhq), complex(xr, xi), eq,
                     ph.theta_e_hat, ph.theta_est, ph.u_dq_est)
    return ConvFllState(complex(nr, ni), nw, nth, ph.theta_e_hat), out


def _srf_step(state: SrfFllState, gains: FllGains, u_ab: complex, ts: float,
              feedthrough: bool, adapt: bool) -> tuple[SrfFllState, FllOutputs]:
    u_ab = complex(u_ab)
    _check_step(gains, ts, u_ab, gains.d if feedthrough else 0.0)
    ua_r, ua_i = u_ab.real, u_ab.imag
    uh_r, uh_i = state.u_hat_dq.real, state.u_hat_dq.imag
    th = state.theta_hat
    wb = state.omega_b
    _check_finite(uh_r, uh_i, wb, th)

    # (1) rotate with the current angle
    c = math.cos(th)
    s = math.sin(th)
    ud = ua_r * c + ua_i * s
    uq = ua_i * c - ua_r * s
    # (2) errors from current states
    eq = uq - uh_i
    xr = ud * uh_r + uq * uh_i
    xi = uq * uh_r - ud * uh_i
    # (3) feedthrough of e_q, not integrated
    w = wb + (gains.d / gains.v_nom) * eq if feedthrough else wb
    ph = _phase(th, uh_r, uh_i, ua_r, ua_i, state.theta_e_hat, gains.eps_mag)
    # (4) Euler updates
    kts = gains.k * ts
    nr = uh_r + kts * (ud - uh_r)
    ni = uh_i + kts * (uq - uh_i)
    nwb = wb + ts * gains.integral_gain * xi if adapt else wb
    # (5) angle driven by the corrected estimate
    nth = wrap_angle(th + w * ts)
    _check_finite(nr, ni, nwb, nth, w)

    out = FllOutputs(w, wb, th, complex(ud, uq), complex(uh_r, uh_i), complex(xr, xi), eq,
                     ph.theta_e_hat, ph.theta_est, ph.u_dq_est)
    return SrfFllState(complex(nr, ni), nwb, nth, ph.theta_e_hat), out


def srf_fll0_step(state: SrfFllState, gains: FllGains, u_ab: complex, ts: float,
                  adapt: bool = True) -> tuple[SrfFllState, FllOutputs]:
    """One step of the synchronous-frame FLL without the ``e_q`` feedthrough."""
    return _srf_step(state, gains, u_ab, ts, False, adapt)


def srf_fll_step(state: SrfFllState, gains: FllGains, u_ab: complex, ts: float,
                 adapt: bool = True) -> tuple[SrfFllState, FllOutputs]:
    """One step of the improved synchronous-frame FLL.

    ``omega_hat = omega_b + (d/v_nom)*e_q`` drives the angle integrator;
    ``omega_b`` integrates ``(k*d/v_nom**2) * Im(x_a)``.
    """
    return _srf_step(state, gains, u_ab, ts, True, adapt)
