"""Pure-Python run loop; the fallback when the compiled kernel is absent."""

from __future__ import annotations

import numpy as np

from . import fll

OUT_COLUMNS = (
    "u_d", "u_q", "uhat_d", "uhat_q", "omega_hat", "omega_b", "theta_hat",
    "theta_e_hat", "theta_est", "ud_est", "uq_est", "x_aR", "x_aI", "e_q",
)


def run(code, u_re, u_im, k, d, v_nom, ts, state, adapt, out):
    """Step estimator ``code`` over the input and fill ``out`` row by row.

    ``state`` is ``(s_re, s_im, omega, theta_hat, theta_e_held)`` where ``s``
    is the filter state (stationary frame for the conventional FLL) and
    ``omega`` the integrator output. Returns ``(fail_index, final_state)``
    with ``fail_index == -1`` on success.
    """
    gains = fll.FllGains(k, d, v_nom)
    s_re, s_im, w, th, held = state
    if code == 0:
        st = fll.ConvFllState(complex(s_re, s_im), w, th, held)
        step = fll.conv_fll_step
    else:
        st = fll.SrfFllState(complex(s_re, s_im), w, th, held)
        step = fll.srf_fll_step if code == 2 else fll.srf_fll0_step
    n = len(u_re)
    for i in range(n):
        try:
            st, o = step(st, gains, complex(u_re[i], u_im[i]), ts, adapt)
        except fll.DivergenceError:
            return i, _pack(st)
        out[i, 0] = o.u_dq.real
        out[i, 1] = o.u_dq.imag
        out[i, 2] = o.u_hat_dq.real
        out[i, 3] = o.u_hat_dq.imag
        out[i, 4] = o.omega_hat
        out[i, 5] = o.omega_b
        out[i, 6] = o.theta_hat
        out[i, 7] = o.theta_e_hat
        out[i, 8] = o.theta_est
        out[i, 9] = o.u_dq_est.real
        out[i, 10] = o.u_dq_est.imag
        out[i, 11] = o.x_a.real
        out[i, 12] = o.x_a.imag
        out[i, 13] = o.e_q
    return -1, _pack(st)


def _pack(st):
    if isinstance(st, fll.ConvFllState):
        s, w = st.u_hat_ab, st.omega_hat
    else:
        s, w = st.u_hat_dq, st.omega_b
    return (s.real, s.imag, w, st.theta_hat, st.theta_e_hat)


def empty_output(n: int) -> np.ndarray:
    return np.zeros((n, len(OUT_COLUMNS)))
