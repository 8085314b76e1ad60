"""Pure-numpy implementations of the hot kernels.

These are the fallback backend; ``zonosafe._speedups`` provides the same two
functions compiled with Cython. Both backends must keep identical semantics:
the test suite cross-checks them, and either one alone must satisfy the
soundness and determinism contracts.
"""

import math

import numpy as np

# Below this input width the chord slope degenerates to the tangent.
DEGENERATE_WIDTH = 1e-12
# Floor on sin(alpha) in the azimuth equation; keeps the chart's 1/sin(alpha)
# blowup integrable at any step size (the load position is insensitive to
# beta in that band).
BETA_DENOM_FLOOR = 1e-2


def tanh_chord_params(lo, hi):
    """Chord-slope relaxation parameters for tanh on [lo, hi], element-wise.

    Returns ``(m, e_lo, e_hi)`` such that for every x in [lo, hi]::

        m*x + e_lo  <=  tanh(x)  <=  m*x + e_hi

    ``m`` is the chord slope (tanh(hi)-tanh(lo))/(hi-lo); the error extremes
    of tanh(x) - m*x are attained at the endpoints or at the interior
    stationary points +-atanh(sqrt(1-m)). Degenerate intervals (width below
    ``DEGENERATE_WIDTH``) use the tangent slope 1 - tanh(lo)^2, which is the
    continuous limit of the chord, and collapse to a zero-width error.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    width = hi - lo
    degen = width < DEGENERATE_WIDTH

    t_lo = np.tanh(lo)
    t_hi = np.tanh(hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(degen, 1.0 - t_lo * t_lo, (t_hi - t_lo) / np.where(degen, 1.0, width))

        e_at_lo = t_lo - m * lo
        e_at_hi = t_hi - m * hi
        e_min = np.minimum(e_at_lo, e_at_hi)
        e_max = np.maximum(e_at_lo, e_at_hi)

        # Interior stationary points exist only when the chord is shallower
        # than the peak slope tanh'(0) = 1.
        has_stat = (~degen) & (m < 1.0)
        r = np.sqrt(np.clip(1.0 - m, 0.0, None))
        x_stat = np.arctanh(np.where(has_stat, r, 0.0))
        e_stat = r - m * x_stat
        pos_in = has_stat & (x_stat >= lo) & (x_stat <= hi)
        neg_in = has_stat & (-x_stat >= lo) & (-x_stat <= hi)
        e_max = np.where(pos_in, np.maximum(e_max, e_stat), e_max)
        e_min = np.where(pos_in, np.minimum(e_min, e_stat), e_min)
        e_max = np.where(neg_in, np.maximum(e_max, -e_stat), e_max)
        e_min = np.where(neg_in, np.minimum(e_min, -e_stat), e_min)

    e_degen = t_lo - m * lo
    e_min = np.where(degen, e_degen, e_min)
    e_max = np.where(degen, e_degen, e_max)
    return m, e_min, e_max


def _clamp(x, limit):
    if x > limit:
        return limit
    if x < -limit:
        return -limit
    return x


def _derivative(s, mu, g, kp, kd, tilt_max, l_rod, sing_tol, frozen):
    """Time derivative of the 16D quadrotor + slung-load state.

    State layout: p(0:3), v(3:6), euler(6:9), omega(9:12), alpha, beta,
    alpha_dot, beta_dot. The load is driven one-way by the quad acceleration
    (no tension back-reaction).
    """
    phi, theta, psi = s[6], s[7], s[8]
    wx, wy, wz = s[9], s[10], s[11]
    alpha, beta = s[12], s[13]
    alpha_dot, beta_dot = s[14], s[15]

    # Outer-loop command -> desired tilt + specific thrust (gravity compensated).
    phi_des = _clamp(-mu[1] / g, tilt_max)
    theta_des = _clamp(mu[0] / g, tilt_max)
    thrust = math.sqrt(mu[0] * mu[0] + mu[1] * mu[1] + (mu[2] + g) * (mu[2] + g))

    c_phi, s_phi = math.cos(phi), math.sin(phi)
    c_th, s_th = math.cos(theta), math.sin(theta)
    c_ps, s_ps = math.cos(psi), math.sin(psi)

    # Body z-axis in world frame (ZYX Euler), translational acceleration.
    ax = thrust * (c_phi * s_th * c_ps + s_phi * s_ps)
    ay = thrust * (c_phi * s_th * s_ps - s_phi * c_ps)
    az = thrust * (c_phi * c_th) - g

    # Euler kinematics and inner PD attitude loop.
    t_th = s_th / c_th
    phi_dot = wx + s_phi * t_th * wy + c_phi * t_th * wz
    theta_dot = c_phi * wy - s_phi * wz
    psi_dot = (s_phi * wy + c_phi * wz) / c_th
    wx_dot = kp * (phi_des - phi) - kd * wx
    wy_dot = kp * (theta_des - theta) - kd * wy
    wz_dot = kp * (0.0 - psi) - kd * wz

    # Rod direction driven by effective gravity in the pivot frame.
    wvx = -ax
    wvy = -ay
    wvz = -g - az
    c_a, s_a = math.cos(alpha), math.sin(alpha)
    c_b, s_b = math.cos(beta), math.sin(beta)
    w_qa = wvx * c_a * c_b + wvy * c_a * s_b + wvz * s_a
    alpha_ddot = s_a * c_a * beta_dot * beta_dot + w_qa / l_rod
    if frozen:
        beta_dot_eff = 0.0
        beta_ddot = 0.0
    else:
        denom = s_a if abs(s_a) >= BETA_DENOM_FLOOR else math.copysign(BETA_DENOM_FLOOR, s_a)
        w_qb = -wvx * s_b + wvy * c_b
        beta_dot_eff = beta_dot
        beta_ddot = -2.0 * alpha_dot * beta_dot * c_a / denom + w_qb / (l_rod * denom)

    d = np.empty(16)
    d[0], d[1], d[2] = s[3], s[4], s[5]
    d[3], d[4], d[5] = ax, ay, az
    d[6], d[7], d[8] = phi_dot, theta_dot, psi_dot
    d[9], d[10], d[11] = wx_dot, wy_dot, wz_dot
    d[12] = alpha_dot
    d[13] = beta_dot_eff
    d[14] = alpha_ddot
    d[15] = beta_ddot
    return d


def plant_rk4(state, mu, params):
    """One RK4 step of the closed-inner-loop plant under a held command.

    ``params`` is the flat tuple (g, dt, kp_att, kd_att, mu_max, tilt_max,
    l_rod, sing_tol). The command is clamped per axis before integration.
    When sin(alpha) is below ``sing_tol`` at step entry the azimuth chart is
    degenerate: beta is frozen and beta_dot zeroed for the whole step.
    """
    g, dt, kp, kd, mu_max, tilt_max, l_rod, sing_tol = params
    s = np.array(state, dtype=np.float64)
    m = (
        _clamp(float(mu[0]), mu_max),
        _clamp(float(mu[1]), mu_max),
        _clamp(float(mu[2]), mu_max),
    )
    frozen = abs(math.sin(s[12])) < sing_tol
    if frozen:
        s[15] = 0.0

    def f(x):
        return _derivative(x, m, g, kp, kd, tilt_max, l_rod, sing_tol, frozen)

    k1 = f(s)
    k2 = f(s + 0.5 * dt * k1)
    k3 = f(s + 0.5 * dt * k2)
    k4 = f(s + dt * k3)
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
