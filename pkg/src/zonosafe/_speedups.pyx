# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: tanh chord relaxation and the 16D plant RK4 step.

Mirrors zonosafe._kernels_py; keep the two implementations in lockstep.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atanh, copysign, cos, fabs, sin, sqrt, tanh

cnp.import_array()

DEF DEGENERATE_WIDTH = 1e-12
DEF BETA_DENOM_FLOOR = 1e-2
DEF NSTATE = 16


def tanh_chord_params(lo, hi):
    """Chord-slope relaxation parameters for tanh on [lo, hi], element-wise.

    Same contract as the pure backend: returns (m, e_lo, e_hi) with
    m*x + e_lo <= tanh(x) <= m*x + e_hi on the interval.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lo_a = np.ascontiguousarray(lo, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hi_a = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Py_ssize_t n = lo_a.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] m_a = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] emin_a = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] emax_a = np.empty(n)
    cdef double l, u, t_lo, t_hi, m, e_at_lo, e_at_hi, e_min, e_max, r, x_stat, e_stat
    cdef Py_ssize_t i
    for i in range(n):
        l = lo_a[i]
        u = hi_a[i]
        t_lo = tanh(l)
        if u - l < DEGENERATE_WIDTH:
            m = 1.0 - t_lo * t_lo
            e_min = t_lo - m * l
            e_max = e_min
        else:
            t_hi = tanh(u)
            m = (t_hi - t_lo) / (u - l)
            e_at_lo = t_lo - m * l
            e_at_hi = t_hi - m * u
            if e_at_lo < e_at_hi:
                e_min = e_at_lo
                e_max = e_at_hi
            else:
                e_min = e_at_hi
                e_max = e_at_lo
            if m < 1.0:
                r = sqrt(1.0 - m)
                x_stat = atanh(r)
                e_stat = r - m * x_stat
                if l <= x_stat <= u:
                    if e_stat > e_max:
                        e_max = e_stat
                    if e_stat < e_min:
                        e_min = e_stat
                if l <= -x_stat <= u:
                    if -e_stat > e_max:
                        e_max = -e_stat
                    if -e_stat < e_min:
                        e_min = -e_stat
        m_a[i] = m
        emin_a[i] = e_min
        emax_a[i] = e_max
    return m_a, emin_a, emax_a


cdef inline double _clamp(double x, double limit) nogil:
    if x > limit:
        return limit
    if x < -limit:
        return -limit
    return x


cdef void _derivative(double* s, double mux, double muy, double muz,
                      double g, double kp, double kd, double tilt_max,
                      double l_rod, double sing_tol, bint frozen,
                      double* d) nogil:
    cdef double phi = s[6], theta = s[7], psi = s[8]
    cdef double wx = s[9], wy = s[10], wz = s[11]
    cdef double alpha = s[12], beta = s[13]
    cdef double alpha_dot = s[14], beta_dot = s[15]

    cdef double phi_des = _clamp(-muy / g, tilt_max)
    cdef double theta_des = _clamp(mux / g, tilt_max)
    cdef double thrust = sqrt(mux * mux + muy * muy + (muz + g) * (muz + g))

    cdef double c_phi = cos(phi), s_phi = sin(phi)
    cdef double c_th = cos(theta), s_th = sin(theta)
    cdef double c_ps = cos(psi), s_ps = sin(psi)

    cdef double ax = thrust * (c_phi * s_th * c_ps + s_phi * s_ps)
    cdef double ay = thrust * (c_phi * s_th * s_ps - s_phi * c_ps)
    cdef double az = thrust * (c_phi * c_th) - g

    cdef double t_th = s_th / c_th
    cdef double phi_dot = wx + s_phi * t_th * wy + c_phi * t_th * wz
    cdef double theta_dot = c_phi * wy - s_phi * wz
    cdef double psi_dot = (s_phi * wy + c_phi * wz) / c_th
    cdef double wx_dot = kp * (phi_des - phi) - kd * wx
    cdef double wy_dot = kp * (theta_des - theta) - kd * wy
    cdef double wz_dot = kp * (0.0 - psi) - kd * wz

    cdef double wvx = -ax
    cdef double wvy = -ay
    cdef double wvz = -g - az
    cdef double c_a = cos(alpha), s_a = sin(alpha)
    cdef double c_b = cos(beta), s_b = sin(beta)
    cdef double w_qa = wvx * c_a * c_b + wvy * c_a * s_b + wvz * s_a
    cdef double alpha_ddot = s_a * c_a * beta_dot * beta_dot + w_qa / l_rod
    cdef double beta_dot_eff, beta_ddot, denom, w_qb
    if frozen:
        beta_dot_eff = 0.0
        beta_ddot = 0.0
    else:
        denom = s_a if fabs(s_a) >= BETA_DENOM_FLOOR else copysign(BETA_DENOM_FLOOR, s_a)
        w_qb = -wvx * s_b + wvy * c_b
        beta_dot_eff = beta_dot
        beta_ddot = -2.0 * alpha_dot * beta_dot * c_a / denom + w_qb / (l_rod * denom)

    d[0] = s[3]; d[1] = s[4]; d[2] = s[5]
    d[3] = ax; d[4] = ay; d[5] = az
    d[6] = phi_dot; d[7] = theta_dot; d[8] = psi_dot
    d[9] = wx_dot; d[10] = wy_dot; d[11] = wz_dot
    d[12] = alpha_dot
    d[13] = beta_dot_eff
    d[14] = alpha_ddot
    d[15] = beta_ddot


def plant_rk4(state, mu, params):
    """One RK4 step of the closed-inner-loop plant under a held command.

    Same contract as the pure backend (params = (g, dt, kp_att, kd_att,
    mu_max, tilt_max, l_rod, sing_tol)).
    """
    cdef double g = params[0], dt = params[1], kp = params[2], kd = params[3]
    cdef double mu_max = params[4], tilt_max = params[5], l_rod = params[6]
    cdef double sing_tol = params[7]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s_in = np.ascontiguousarray(state, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(NSTATE)
    cdef double mux = _clamp(float(mu[0]), mu_max)
    cdef double muy = _clamp(float(mu[1]), mu_max)
    cdef double muz = _clamp(float(mu[2]), mu_max)

    cdef double s[NSTATE]
    cdef double tmp[NSTATE]
    cdef double k1[NSTATE]
    cdef double k2[NSTATE]
    cdef double k3[NSTATE]
    cdef double k4[NSTATE]
    cdef Py_ssize_t i
    for i in range(NSTATE):
        s[i] = s_in[i]
    cdef bint frozen = fabs(sin(s[12])) < sing_tol
    if frozen:
        s[15] = 0.0

    with nogil:
        _derivative(s, mux, muy, muz, g, kp, kd, tilt_max, l_rod, sing_tol, frozen, k1)
        for i in range(NSTATE):
            tmp[i] = s[i] + 0.5 * dt * k1[i]
        _derivative(tmp, mux, muy, muz, g, kp, kd, tilt_max, l_rod, sing_tol, frozen, k2)
        for i in range(NSTATE):
            tmp[i] = s[i] + 0.5 * dt * k2[i]
        _derivative(tmp, mux, muy, muz, g, kp, kd, tilt_max, l_rod, sing_tol, frozen, k3)
        for i in range(NSTATE):
            tmp[i] = s[i] + dt * k3[i]
        _derivative(tmp, mux, muy, muz, g, kp, kd, tilt_max, l_rod, sing_tol, frozen, k4)
        for i in range(NSTATE):
            tmp[i] = s[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    for i in range(NSTATE):
        out[i] = tmp[i]
    return out
