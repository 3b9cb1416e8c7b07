# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_pure``.

Operation order mirrors the Python twins so both backends agree to rounding.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, exp, fmod, M_PI

cnp.import_array()

BACKEND = "cython"


def se_kernel_matrix(X1, X2, inv_ls2, sf2):
    cdef const double[:, :] a = np.ascontiguousarray(X1, dtype=np.float64)
    cdef const double[:, :] b = np.ascontiguousarray(X2, dtype=np.float64)
    cdef const double[:] il = np.ascontiguousarray(inv_ls2, dtype=np.float64)
    cdef double s = sf2
    cdef Py_ssize_t n1 = a.shape[0], n2 = b.shape[0], d = a.shape[1]
    out = np.empty((n1, n2))
    cdef double[:, :] o = out
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    for i in range(n1):
        for j in range(n2):
            acc = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                acc = acc + diff * diff * il[k]
            o[i, j] = s * exp(-0.5 * acc)
    return out


def se_kernel_vector(x, X, inv_ls2, sf2):
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :] b = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:] il = np.ascontiguousarray(inv_ls2, dtype=np.float64)
    cdef double s = sf2
    cdef Py_ssize_t m = b.shape[0], d = b.shape[1]
    out = np.empty(m)
    cdef double[:] o = out
    cdef Py_ssize_t j, k
    cdef double acc, diff
    for j in range(m):
        acc = 0.0
        for k in range(d):
            diff = b[j, k] - xv[k]
            acc = acc + diff * diff * il[k]
        o[j] = s * exp(-0.5 * acc)
    return out


def interp_outputs(x, support, inv_ls2, sf2, coef):
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :] sp = np.ascontiguousarray(support, dtype=np.float64)
    cdef const double[:, :] il = np.ascontiguousarray(inv_ls2, dtype=np.float64)
    cdef const double[:] s = np.ascontiguousarray(sf2, dtype=np.float64)
    cdef const double[:, :] c = np.ascontiguousarray(coef, dtype=np.float64)
    cdef Py_ssize_t n_out = il.shape[0], m = sp.shape[0], d = sp.shape[1]
    out = np.zeros(n_out)
    cdef double[:] o = out
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, tot
    for j in range(n_out):
        tot = 0.0
        for i in range(m):
            acc = 0.0
            for k in range(d):
                diff = sp[i, k] - xv[k]
                acc = acc + diff * diff * il[j, k]
            tot = tot + exp(-0.5 * acc) * s[j] * c[j, i]
        o[j] = tot
    return out


def cartpole_step(double x, double x_dot, double theta, double theta_dot, double force,
                  double m, double l, double tau, double g, double cart_mass):
    cdef double total = cart_mass + m
    cdef double sin_t = sin(theta)
    cdef double cos_t = cos(theta)
    cdef double v = (force + m * l * theta_dot * theta_dot * sin_t) / total
    cdef double theta_acc = (g * sin_t - v * cos_t) / (l * (4.0 / 3.0 - m * cos_t * cos_t / total))
    return (x + tau * x_dot,
            x_dot + tau * (v - m * l * theta_acc * cos_t / total),
            theta + tau * theta_dot,
            theta_dot + tau * theta_acc)


cdef inline double _wrap(double a):
    cdef double r = fmod(M_PI - a, 2.0 * M_PI)
    if r < 0.0:
        r += 2.0 * M_PI
    return M_PI - r


def wrap_angle(double a):
    return _wrap(a)


def acrobot_step(double th1, double dth1, double th2, double dth2, double torque,
                 double m1, double m2, double l1, double lc1, double lc2, double i1, double i2,
                 double g, double dt, int substeps, double max_vel1, double max_vel2, bint wrap):
    cdef int n
    cdef double cos2, sin2, d1, d2, phi1, phi2, a1, a2
    for n in range(substeps):
        cos2 = cos(th2)
        sin2 = sin(th2)
        d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * cos2) + i1 + i2
        d2 = m2 * (lc2 * lc2 + l1 * lc2 * cos2) + i2
        phi2 = m2 * lc2 * g * cos(th1 + th2 - M_PI / 2.0)
        phi1 = (-m2 * l1 * lc2 * dth2 * dth2 * sin2
                - 2.0 * m2 * l1 * lc2 * dth2 * dth1 * sin2
                + (m1 * lc1 + m2 * l1) * g * cos(th1 - M_PI / 2.0)
                + phi2)
        a2 = ((torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dth1 * dth1 * sin2 - phi2)
              / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1))
        a1 = -(d2 * a2 + phi1) / d1
        th1 = th1 + dt * dth1
        th2 = th2 + dt * dth2
        dth1 = min(max(dth1 + dt * a1, -max_vel1), max_vel1)
        dth2 = min(max(dth2 + dt * a2, -max_vel2), max_vel2)
    if wrap:
        th1 = _wrap(th1)
        th2 = _wrap(th2)
    return th1, dth1, th2, dth2


def _fourier_int(const double[::1] sv, const long long[:, ::1] c):
    cdef Py_ssize_t n = c.shape[0], d = c.shape[1], i, k, j, top = 0
    cdef long long v
    for i in range(n):
        for k in range(d):
            v = c[i, k]
            if v < 0 or v > 64:
                return None
            if v > top:
                top = v
    out = np.empty(n)
    cdef double[::1] o = out
    tab = np.empty((d, top + 1, 2))
    cdef double[:, :, ::1] tb = tab
    cdef double re, im, cr, ci, t
    for k in range(d):
        for j in range(top + 1):
            tb[k, j, 0] = cos(M_PI * j * sv[k])
            tb[k, j, 1] = sin(M_PI * j * sv[k])
    for i in range(n):
        j = c[i, 0]
        re = tb[0, j, 0]
        im = tb[0, j, 1]
        for k in range(1, d):
            j = c[i, k]
            cr = tb[k, j, 0]
            ci = tb[k, j, 1]
            t = re * cr - im * ci
            im = re * ci + im * cr
            re = t
        o[i] = re
    return out


def fourier_features(s_unit, coeffs):
    if (isinstance(coeffs, np.ndarray) and coeffs.dtype == np.int64 and coeffs.ndim == 2
            and coeffs.shape[1] > 0 and coeffs.flags.c_contiguous):
        out = _fourier_int(np.ascontiguousarray(s_unit, dtype=np.float64), coeffs)
        if out is not None:
            return out
    cdef const double[::1] sv = np.ascontiguousarray(s_unit, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], d = c.shape[1]
    out = np.empty(n)
    cdef double[::1] o = out
    cdef Py_ssize_t i, k, j, top = 0
    cdef double acc, re, im, cr, ci, t
    cdef bint integral = True
    for i in range(n):
        for k in range(d):
            t = c[i, k]
            if t < 0 or t != <double><long>t or t > 64:
                integral = False
            elif <Py_ssize_t>t > top:
                top = <Py_ssize_t>t
    if not integral:
        for i in range(n):
            acc = 0.0
            for k in range(d):
                acc = acc + c[i, k] * sv[k]
            o[i] = cos(M_PI * acc)
        return out
    # Integer multi-indices: exp(i pi c.s) = prod_k exp(i pi s_k)^{c_k}, with the
    # per-dimension powers tabulated once.
    tab = np.empty((d, top + 1, 2))
    cdef double[:, :, ::1] tb = tab
    for k in range(d):
        for j in range(top + 1):
            tb[k, j, 0] = cos(M_PI * j * sv[k])
            tb[k, j, 1] = sin(M_PI * j * sv[k])
    for i in range(n):
        j = <Py_ssize_t>c[i, 0]
        re = tb[0, j, 0]
        im = tb[0, j, 1]
        for k in range(1, d):
            j = <Py_ssize_t>c[i, k]
            cr = tb[k, j, 0]
            ci = tb[k, j, 1]
            t = re * cr - im * ci
            im = re * ci + im * cr
            re = t
        o[i] = re
    return out
