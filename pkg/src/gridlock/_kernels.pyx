# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled run loop for the three estimators.

Mirrors the arithmetic of :mod:`gridlock.fll` operation for operation so the
two backends agree bit for bit (built with ``-ffp-contract=off``).
"""

from libc.math cimport sin, cos, atan2, sqrt, remainder, isfinite, M_PI

cdef double TWO_PI = 2.0 * M_PI


cdef inline double wrap(double x) nogil:
    cdef double w = remainder(x, TWO_PI)
    if w <= -M_PI:
        w += TWO_PI
    return w


def run(int code, const double[::1] u_re, const double[::1] u_im, double k, double d,
        double v_nom, double ts, tuple state, bint adapt, double[:, ::1] out):
    """See :func:`gridlock._kernels_py.run` for the contract."""
    cdef Py_ssize_t n = u_re.shape[0]
    cdef Py_ssize_t i
    cdef int fail = -1
    cdef double s_r = state[0], s_i = state[1], w = state[2], th = state[3], held = state[4]
    cdef double D = k * d / (v_nom * v_nom)
    cdef double d_over_v = d / v_nom
    cdef double eps = 1e-6 * v_nom
    cdef double kts = k * ts
    cdef double ua_r, ua_i, c, s, ud, uq, uhd, uhq, xr, xi, eq, wh
    cdef double th_e, th_est, ce, se, nr, ni, nw, nth, cw, sw

    if out.shape[0] < n or out.shape[1] < 14:
        raise ValueError("output buffer too small")

    with nogil:
        for i in range(n):
            ua_r = u_re[i]
            ua_i = u_im[i]
            if not (isfinite(ua_r) and isfinite(ua_i) and isfinite(s_r) and isfinite(s_i)
                    and isfinite(w) and isfinite(th)):
                fail = i
                break
            c = cos(th)
            s = sin(th)
            ud = ua_r * c + ua_i * s
            uq = ua_i * c - ua_r * s
            if code == 0:
                uhd = s_r * c + s_i * s
                uhq = s_i * c - s_r * s
                xr = ua_r * s_r + ua_i * s_i
                xi = ua_i * s_r - ua_r * s_i
                wh = w
            else:
                uhd = s_r
                uhq = s_i
                xr = ud * s_r + uq * s_i
                xi = uq * s_r - ud * s_i
                wh = w
            eq = uq - uhq
            if code == 2:
                wh = w + d_over_v * eq

            if sqrt(uhd * uhd + uhq * uhq) > eps:
                th_e = atan2(uhq, uhd)
            else:
                th_e = held
            if th_e <= -M_PI:
                th_e = M_PI
            th_est = wrap(th + th_e)
            ce = cos(th_est)
            se = sin(th_est)

            if code == 0:
                cw = cos(w * ts)
                sw = sin(w * ts)
                nr = (s_r * cw - s_i * sw) + kts * (ua_r - s_r)
                ni = (s_r * sw + s_i * cw) + kts * (ua_i - s_i)
            else:
                nr = s_r + kts * (ud - s_r)
                ni = s_i + kts * (uq - s_i)
            if adapt:
                nw = w + ts * D * xi
            else:
                nw = w
            nth = wrap(th + wh * ts)
            if not (isfinite(nr) and isfinite(ni) and isfinite(nw) and isfinite(nth)
                    and isfinite(wh)):
                fail = i
                break

            out[i, 0] = ud
            out[i, 1] = uq
            out[i, 2] = uhd
            out[i, 3] = uhq
            out[i, 4] = wh
            out[i, 5] = w
            out[i, 6] = th
            out[i, 7] = th_e
            out[i, 8] = th_est
            out[i, 9] = ua_r * ce + ua_i * se
            out[i, 10] = ua_i * ce - ua_r * se
            out[i, 11] = xr
            out[i, 12] = xi
            out[i, 13] = eq

            s_r = nr
            s_i = ni
            w = nw
            th = nth
            held = th_e

    return fail, (s_r, s_i, w, th, held)
