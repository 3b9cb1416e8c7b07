"""Pure-Python/numpy implementations of the hot kernels.

Every function here has a twin in ``_ext.pyx`` with the same signature and
the same floating-point operation order, so the two backends agree to
rounding.  ``hipmdp._core`` picks one at import time.
"""

import math

import numpy as np

BACKEND = "python"


def se_kernel_matrix(X1, X2, inv_ls2, sf2):
    """Anisotropic squared-exponential Gram matrix between row sets."""
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    n1, d = X1.shape
    out = np.zeros((n1, X2.shape[0]))
    for j in range(d):
        diff = X1[:, j][:, None] - X2[:, j][None, :]
        out += diff * diff * inv_ls2[j]
    return sf2 * np.exp(-0.5 * out)


def se_kernel_vector(x, X, inv_ls2, sf2):
    x = np.asarray(x, dtype=np.float64)
    diff = np.asarray(X, dtype=np.float64) - x[None, :]
    r2 = (diff * diff) @ np.asarray(inv_ls2, dtype=np.float64)
    return sf2 * np.exp(-0.5 * r2)


def interp_outputs(x, support, inv_ls2, sf2, coef):
    """Sum over support of ``coef[j, i] * k_j(x, support[i])`` for each output j.

    ``inv_ls2`` is (n_out, d), ``sf2`` is (n_out,), ``coef`` is (n_out, m).
    """
    x = np.asarray(x, dtype=np.float64)
    diff = support - x[None, :]
    sq = diff * diff
    r2 = sq @ inv_ls2.T
    kv = np.exp(-0.5 * r2) * sf2[None, :]
    return np.einsum("ij,ji->j", kv, coef)


def cartpole_step(x, x_dot, theta, theta_dot, force, m, l, tau, g, cart_mass):
    total = cart_mass + m
    sin_t = math.sin(theta)
    cos_t = math.cos(theta)
    v = (force + m * l * theta_dot * theta_dot * sin_t) / total
    theta_acc = (g * sin_t - v * cos_t) / (l * (4.0 / 3.0 - m * cos_t * cos_t / total))
    x_new = x + tau * x_dot
    x_dot_new = x_dot + tau * (v - m * l * theta_acc * cos_t / total)
    theta_new = theta + tau * theta_dot
    theta_dot_new = theta_dot + tau * theta_acc
    return x_new, x_dot_new, theta_new, theta_dot_new


def _acrobot_accel(th1, dth1, th2, dth2, torque, m1, m2, l1, lc1, lc2, i1, i2, g):
    cos2 = math.cos(th2)
    sin2 = math.sin(th2)
    d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * cos2) + i1 + i2
    d2 = m2 * (lc2 * lc2 + l1 * lc2 * cos2) + i2
    phi2 = m2 * lc2 * g * math.cos(th1 + th2 - math.pi / 2.0)
    phi1 = (-m2 * l1 * lc2 * dth2 * dth2 * sin2
            - 2.0 * m2 * l1 * lc2 * dth2 * dth1 * sin2
            + (m1 * lc1 + m2 * l1) * g * math.cos(th1 - math.pi / 2.0)
            + phi2)
    ddth2 = ((torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dth1 * dth1 * sin2 - phi2)
             / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1))
    ddth1 = -(d2 * ddth2 + phi1) / d1
    return ddth1, ddth2


def wrap_angle(a):
    """Map an angle into (-pi, pi]."""
    r = math.fmod(math.pi - a, 2.0 * math.pi)
    if r < 0.0:
        r += 2.0 * math.pi
    return math.pi - r


def acrobot_step(th1, dth1, th2, dth2, torque, m1, m2, l1, lc1, lc2, i1, i2, g,
                 dt, substeps, max_vel1, max_vel2, wrap):
    for _ in range(substeps):
        a1, a2 = _acrobot_accel(th1, dth1, th2, dth2, torque, m1, m2, l1, lc1, lc2, i1, i2, g)
        th1 = th1 + dt * dth1
        th2 = th2 + dt * dth2
        dth1 = min(max(dth1 + dt * a1, -max_vel1), max_vel1)
        dth2 = min(max(dth2 + dt * a2, -max_vel2), max_vel2)
    if wrap:
        th1 = wrap_angle(th1)
        th2 = wrap_angle(th2)
    return th1, dth1, th2, dth2


def fourier_features(s_unit, coeffs):
    """cos(pi * c . s) for each multi-index row c."""
    return np.cos(math.pi * (coeffs @ np.asarray(s_unit, dtype=np.float64)))
