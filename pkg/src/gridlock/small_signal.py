"""Small-signal transfer functions of the FLLs and closed-form evaluators.

Polynomials are stored with ascending powers of ``s``: ``[a0, a1, a2]`` is
``a0 + a1*s + a2*s**2``. Step responses are computed analytically from
partial fractions so they stay independent of any time-stepping scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

REPEATED_ROOT_RTOL = 1e-9


class TfKind(str, Enum):
    CONV_OMEGA = "ConvOmega"
    CONV_THETA = "ConvTheta"
    SRF_OMEGA = "SrfOmega"
    SRF_OMEGA_B = "SrfOmegaB"
    SRF_THETA_HAT = "SrfThetaHat"
    SRF_THETA_E = "SrfThetaE"
    SRF_THETA_EST = "SrfThetaEst"


def _trim(c: Sequence[float]) -> tuple[float, ...]:
    c = [float(x) for x in c]
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    return tuple(c)


def poly_eval(coeffs: Sequence[float], s: complex) -> complex:
    acc = 0j
    for a in reversed(coeffs):
        acc = acc * s + a
    return acc


def poly_mul(a: Sequence[float], b: Sequence[float]) -> tuple[float, ...]:
    out = [0.0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return tuple(out)


def poly_add(a: Sequence[float], b: Sequence[float]) -> tuple[float, ...]:
    n = max(len(a), len(b))
    return tuple((a[i] if i < len(a) else 0.0) + (b[i] if i < len(b) else 0.0) for i in range(n))


@dataclass(frozen=True)
class RationalTf:
    num: tuple[float, ...]
    den: tuple[float, ...]

    def __post_init__(self):
        num = _trim(self.num)
        den = _trim(self.den)
        if den[-1] == 0.0:
            raise ValueError("denominator is identically zero")
        if len(num) > len(den):
            raise ValueError("improper transfer function")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @property
    def order(self) -> int:
        return len(self.den) - 1

    def __call__(self, s: complex) -> complex:
        return poly_eval(self.num, s) / poly_eval(self.den, s)

    def monic(self) -> "RationalTf":
        lead = self.den[-1]
        return RationalTf(tuple(x / lead for x in self.num), tuple(x / lead for x in self.den))

    def dc_gain(self) -> float:
        return self.num[0] / self.den[0]

    def __mul__(self, other: "RationalTf") -> "RationalTf":
        return RationalTf(poly_mul(self.num, other.num), poly_mul(self.den, other.den))

    def feedback(self) -> "RationalTf":
        """Unity negative-feedback closed loop ``G / (1 + G)``."""
        return RationalTf(self.num, poly_add(self.den, self.num))


@dataclass(frozen=True)
class SecondOrderChar:
    poles: tuple[complex, ...]
    zeta: Optional[float] = None
    omega_n: Optional[float] = None

    @property
    def decay_rate(self) -> float:
        """Mean magnitude of the pole real parts (``zeta*omega_n`` for order 2)."""
        return -sum(p.real for p in self.poles) / len(self.poles)


def _check_gains(k: float, d: float):
    if not (k > 0 and d > 0 and math.isfinite(k) and math.isfinite(d)):
        raise ValueError(f"gains must be finite and > 0 (k={k}, d={d})")


def build_tf(kind: TfKind | str, k: float, d: float) -> RationalTf:
    """Closed-loop small-signal transfer function of the given kind."""
    _check_gains(k, d)
    kind = TfKind(kind)
    kd = k * d
    if kind is TfKind.CONV_OMEGA:
        return RationalTf((kd,), (kd, k, 1.0))
    if kind is TfKind.CONV_THETA:
        return RationalTf((kd, k), (kd, k, 1.0))
    if kind in (TfKind.SRF_OMEGA, TfKind.SRF_THETA_HAT):
        return RationalTf((d,), (d, 1.0))
    if kind is TfKind.SRF_OMEGA_B:
        return RationalTf((kd,), (kd, k + d, 1.0))
    if kind is TfKind.SRF_THETA_E:
        return RationalTf((0.0, k), (kd, k + d, 1.0))
    if kind is TfKind.SRF_THETA_EST:
        return RationalTf((kd, k + d), (kd, k + d, 1.0))
    raise ValueError(f"unknown kind {kind}")  # pragma: no cover


def open_loop_gain(k: float, d: float, with_selected_G: bool) -> RationalTf:
    """Open-loop gain of the frequency-estimation loop.

    Without the extra filter it is ``(d/s) * k/(s+k)``; with the selected
    filter the two branches add to one and the result is ``d/s``.
    """
    _check_gains(k, d)
    if with_selected_G:
        return RationalTf((d,), (0.0, 1.0))
    return RationalTf((d * k,), (0.0, k, 1.0))


def _quadratic_roots(a0: float, a1: float, a2: float) -> tuple[tuple[complex, complex], bool]:
    """Roots of ``a2 s^2 + a1 s + a0``; the flag marks a repeated root."""
    disc = a1 * a1 - 4.0 * a2 * a0
    scale = max(a1 * a1, abs(4.0 * a2 * a0))
    if abs(disc) < REPEATED_ROOT_RTOL * scale:
        r = -a1 / (2.0 * a2)
        return (complex(r), complex(r)), True
    if disc > 0:
        # avoid cancellation: compute the larger-magnitude root first
        q = -0.5 * (a1 + math.copysign(math.sqrt(disc), a1))
        r1 = q / a2
        r2 = a0 / q if q != 0 else -a1 / a2 - r1
        return tuple(sorted((complex(r1), complex(r2)), key=lambda z: z.real)), False
    re = -a1 / (2.0 * a2)
    im = math.sqrt(-disc) / (2.0 * abs(a2))
    return (complex(re, im), complex(re, -im)), False


def characteristic(tf: RationalTf) -> SecondOrderChar:
    """Poles, damping ratio and natural frequency of a first/second-order TF."""
    den = tf.den
    if tf.order == 1:
        return SecondOrderChar((complex(-den[0] / den[1]),))
    if tf.order != 2:
        raise ValueError(f"order {tf.order} unsupported (1 or 2 only)")
    a0, a1, a2 = den
    poles, _ = _quadratic_roots(a0, a1, a2)
    zeta = omega_n = None
    ratio = a0 / a2
    if ratio > 0:
        omega_n = math.sqrt(ratio)
        zeta = (a1 / a2) / (2.0 * omega_n)
    return SecondOrderChar(poles, zeta, omega_n)


def bode_magnitude(tf: RationalTf, omegas: Iterable[float]) -> np.ndarray:
    w = np.asarray(list(omegas) if not isinstance(omegas, np.ndarray) else omegas, dtype=float)
    if np.any(w <= 0):
        raise ValueError("frequencies must be > 0")
    s = 1j * w
    num = np.polyval(tf.num[::-1], s)
    den = np.polyval(tf.den[::-1], s)
    return np.abs(num / den)


def _dpoly(c: Sequence[float]) -> tuple[float, ...]:
    return tuple(i * c[i] for i in range(1, len(c))) or (0.0,)


def step_response(tf: RationalTf, times: Iterable[float]) -> np.ndarray:
    """Analytic unit-step response ``L^-1{ tf(s) / s }``.

    Branches for a single real pole, distinct real poles, a repeated real
    pole and a complex-conjugate pair. Negative times give zero.
    """
    t = np.asarray(list(times) if not isinstance(times, np.ndarray) else times, dtype=float)
    if tf.order not in (1, 2):
        raise ValueError("step_response supports first- and second-order TFs only")
    num, den = tf.num, tf.den
    lead = den[-1]
    if tf.order == 1:
        p = -den[0] / den[1]
        poles, repeated = (complex(p),), False
    else:
        poles, repeated = _quadratic_roots(*den)
    for p in poles:
        if not p.real < 0:
            raise ValueError(f"unstable or marginal pole {p}")

    final = num[0] / den[0]
    tt = np.clip(t, 0.0, None)
    y = np.full(t.shape, final, dtype=float)

    if tf.order == 1:
        p = poles[0].real
        # residue of N(s) / (s * lead * (s - p)) at p
        r = poly_eval(num, p).real / (lead * p)
        y = y + r * np.exp(p * tt)
    elif repeated:
        p = poles[0].real

        # F(s) = N(s) / (lead * s) ; Y = F(s) / (s - p)^2
        def f(s):
            return poly_eval(num, s).real / (lead * s)

        fp = f(p)
        dnum = poly_eval(_dpoly(num), p).real
        dfp = (dnum * p - poly_eval(num, p).real) / (lead * p * p)
        y = y + (dfp + fp * tt) * np.exp(p * tt)
    elif poles[0].imag == 0.0:
        p1, p2 = poles[0].real, poles[1].real
        r1 = poly_eval(num, p1).real / (lead * p1 * (p1 - p2))
        r2 = poly_eval(num, p2).real / (lead * p2 * (p2 - p1))
        y = y + r1 * np.exp(p1 * tt) + r2 * np.exp(p2 * tt)
    else:
        p = poles[0]
        r = poly_eval(num, p) / (lead * p * (p - p.conjugate()))
        # conjugate pair contributes 2*Re(r e^{pt})
        y = y + 2.0 * np.real(r * np.exp(p * tt))
    y[t < 0] = 0.0
    return y


def steady_state_aux(k: float, omega_e: float, V: float) -> complex:
    """Steady-state auxiliary variable for a constant frequency error."""
    if not (k > 0 and V > 0):
        raise ValueError("k and V must be > 0")
    return (k * k + 1j * k * omega_e) / (k * k + omega_e * omega_e) * V * V


def overshoot_percent(zeta: float) -> float:
    """Peak overshoot of a standard second-order step response, in percent."""
    if not zeta > 0:
        raise ValueError("zeta must be > 0")
    if zeta >= 1.0:
        return 0.0
    return 100.0 * math.exp(-math.pi * zeta / math.sqrt(1.0 - zeta * zeta))


def damping_regime(k: float, d: float) -> str:
    """Damping regime of the conventional FLL as classified by its gains.

    Returns ``"overdamped"`` (zeta >= 1), ``"moderate"`` (1/sqrt2 <= zeta < 1)
    or ``"underdamped"`` (zeta < 1/sqrt2).
    """
    _check_gains(k, d)
    if d <= 0.25 * k:
        return "overdamped"
    if d <= 0.5 * k:
        return "moderate"
    return "underdamped"


def residual(tf: RationalTf, root: complex) -> float:
    """Relative residual ``|den(root)| / sum |a_i root^i|``."""
    terms = [abs(a * root ** i) for i, a in enumerate(tf.den)]
    return abs(poly_eval(tf.den, root)) / max(sum(terms), 1e-300)


__all__ = [
    "TfKind", "RationalTf", "SecondOrderChar", "build_tf", "open_loop_gain", "characteristic",
    "bode_magnitude", "step_response", "steady_state_aux", "overshoot_percent", "damping_regime",
    "residual",
]
