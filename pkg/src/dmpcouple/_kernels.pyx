# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled guarded, network-coupled unroll loop.

Same contract as ``_kernels_py.rollout_mlp``; see that module for the
argument layout.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, fabs, floor, acos, isfinite

cnp.import_array()

cdef double TIE_TOL = 1e-10
cdef double MIN_SPEED = 1e-8
cdef double HALF_PI = 1.5707963267948966


cdef inline double _max3(double a, double b, double c) nogil:
    cdef double m = a
    if b > m:
        m = b
    if c > m:
        m = c
    return m


cdef double _sdf(int kind, const double[::1] dims, double q0, double q1, double q2) nogil:
    cdef double d0, d1, d2, o0, o1, o2, radial, axial, m
    if kind == 0:
        return sqrt(q0 * q0 + q1 * q1 + q2 * q2) - dims[0]
    if kind == 1:
        d0 = fabs(q0) - dims[0]
        d1 = fabs(q1) - dims[1]
        d2 = fabs(q2) - dims[2]
        o0 = d0 if d0 > 0.0 else 0.0
        o1 = d1 if d1 > 0.0 else 0.0
        o2 = d2 if d2 > 0.0 else 0.0
        m = _max3(d0, d1, d2)
        return sqrt(o0 * o0 + o1 * o1 + o2 * o2) + (m if m < 0.0 else 0.0)
    radial = sqrt(q0 * q0 + q1 * q1) - dims[0]
    axial = fabs(q2) - dims[1]
    o0 = radial if radial > 0.0 else 0.0
    o1 = axial if axial > 0.0 else 0.0
    m = radial if radial > axial else axial
    return sqrt(o0 * o0 + o1 * o1) + (m if m < 0.0 else 0.0)


cdef inline bint _before(double ba, Py_ssize_t ia, double bb, Py_ssize_t ib) nogil:
    # lexicographic (bucket, index)
    return ba < bb or (ba == bb and ia < ib)


cdef void _nearest3(const double[:, ::1] cloud, double x0, double x1, double x2, Py_ssize_t* out) nogil:
    cdef Py_ssize_t m = cloud.shape[0], j
    cdef double b[3]
    cdef double bj, e0, e1, e2
    b[0] = b[1] = b[2] = 1e300
    out[0] = out[1] = out[2] = -1
    for j in range(m):
        e0 = cloud[j, 0] - x0
        e1 = cloud[j, 1] - x1
        e2 = cloud[j, 2] - x2
        bj = floor(sqrt(e0 * e0 + e1 * e1 + e2 * e2) / TIE_TOL)
        if out[2] >= 0 and not _before(bj, j, b[2], out[2]):
            continue
        if out[1] < 0 or _before(bj, j, b[1], out[1]):
            b[2] = b[1]
            out[2] = out[1]
            if out[0] < 0 or _before(bj, j, b[0], out[0]):
                b[1] = b[0]
                out[1] = out[0]
                b[0] = bj
                out[0] = j
            else:
                b[1] = bj
                out[1] = j
        else:
            b[2] = bj
            out[2] = j


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def rollout_mlp(const double[:, ::1] weights, const double[::1] centers, const double[::1] widths, gains,
                const double[::1] a, const double[::1] goal, double tau, double dt, Py_ssize_t n,
                const double[:, ::1] cloud, const double[::1] center, const double[:, ::1] orient, int kind,
                const double[::1] dims,
                const double[:, ::1] W1, const double[::1] b1, const double[:, ::1] W2, const double[::1] b2,
                const double[:, ::1] W3, const double[::1] b3, const double[::1] in_mean, const double[::1] in_std,
                const double[::1] out_lo, const double[::1] out_hi,
                guard_flags, double guard_width, double x_obs, double x_goal, double sig_eps):
    cdef double alpha_v = gains[0], beta_v = gains[1], alpha_s = gains[2]
    cdef bint g_beyond = bool(guard_flags[0]), g_zero_x = bool(guard_flags[1]), g_pass = bool(guard_flags[2])
    cdef Py_ssize_t nb = centers.shape[0], n1 = W1.shape[0], n2 = W2.shape[0]
    cdef Py_ssize_t k, i, j, d, last = n
    cdef Py_ssize_t idx[3]

    X_arr = np.empty((n, 3))
    V_arr = np.empty((n, 3))
    VD_arr = np.empty((n, 3))
    S_arr = np.empty(n)
    RAW_arr = np.empty((n, 3))
    CT_arr = np.empty((n, 3))
    SD_arr = np.empty(n)
    cdef double[:, ::1] X = X_arr
    cdef double[:, ::1] V = V_arr
    cdef double[:, ::1] VD = VD_arr
    cdef double[::1] S = S_arr
    cdef double[:, ::1] RAW = RAW_arr
    cdef double[:, ::1] CT = CT_arr
    cdef double[::1] SD = SD_arr

    cdef double x[3]
    cdef double v[3]
    cdef double crel[3]
    cdef double feat[17]
    cdef double z[17]
    cdef double h1[64]
    cdef double h2[64]
    cdef double raw[3]
    cdef double ct[3]
    cdef double f[3]
    cdef double vdot[3]
    cdef double s = 1.0, acc, speed, ncrel, c, dist, y, scale, psi, total, q0, q1, q2, dx0, dx1, dx2
    cdef bint ok

    if n1 > 64 or n2 > 64:
        raise ValueError("hidden layers wider than 64 units are not supported")
    if cloud.shape[0] < 3:
        raise ValueError("cloud needs at least 3 points")

    with nogil:
        for d in range(3):
            x[d] = 0.0
            v[d] = 0.0
        for k in range(n):
            _nearest3(cloud, x[0], x[1], x[2], idx)
            for i in range(3):
                for d in range(3):
                    feat[3 * i + d] = cloud[idx[i], d] - x[d]
            for d in range(3):
                crel[d] = center[d] - x[d]
                feat[9 + d] = crel[d]
                feat[12 + d] = v[d]
            dx0 = x[0] - center[0]
            dx1 = x[1] - center[1]
            dx2 = x[2] - center[2]
            q0 = dx0 * orient[0, 0] + dx1 * orient[1, 0] + dx2 * orient[2, 0]
            q1 = dx0 * orient[0, 1] + dx1 * orient[1, 1] + dx2 * orient[2, 1]
            q2 = dx0 * orient[0, 2] + dx1 * orient[1, 2] + dx2 * orient[2, 2]
            dist = _sdf(kind, dims, q0, q1, q2)
            feat[15] = dist
            speed = sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
            ncrel = sqrt(crel[0] * crel[0] + crel[1] * crel[1] + crel[2] * crel[2])
            if speed / tau < MIN_SPEED or ncrel < 1e-12:
                feat[16] = HALF_PI
            else:
                c = (v[0] * crel[0] + v[1] * crel[1] + v[2] * crel[2]) / (speed * ncrel)
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
                feat[16] = acos(c)

            for i in range(17):
                z[i] = (feat[i] - in_mean[i]) / in_std[i]
            for i in range(n1):
                acc = 0.0
                for j in range(17):
                    acc = acc + W1[i, j] * z[j]
                acc = acc + b1[i]
                h1[i] = acc if acc > 0.0 else 0.0
            for i in range(n2):
                acc = 0.0
                for j in range(n1):
                    acc = acc + W2[i, j] * h1[j]
                acc = acc + b2[i]
                h2[i] = acc if acc > 0.0 else 0.0
            for d in range(3):
                acc = 0.0
                for j in range(n2):
                    acc = acc + W3[d, j] * h2[j]
                acc = acc + b3[d]
                y = _sigmoid(acc)
                if y < sig_eps:
                    y = sig_eps
                elif y > 1.0 - sig_eps:
                    y = 1.0 - sig_eps
                raw[d] = out_lo[d] + (out_hi[d] - out_lo[d]) * y
                ct[d] = raw[d]

            if g_beyond and x_obs > x_goal:
                ct[0] = 0.0
                ct[1] = 0.0
                ct[2] = 0.0
            else:
                if g_zero_x:
                    ct[0] = 0.0
                if g_pass and x_obs < x[0]:
                    scale = exp(-guard_width * (x_obs - x[0]) * (x_obs - x[0]))
                    for d in range(3):
                        ct[d] = ct[d] * scale

            total = 0.0
            f[0] = 0.0
            f[1] = 0.0
            f[2] = 0.0
            for i in range(nb):
                psi = exp(-widths[i] * (s - centers[i]) * (s - centers[i]))
                total = total + psi
                for d in range(3):
                    f[d] = f[d] + weights[d, i] * psi
            for d in range(3):
                if total < 1e-10:
                    f[d] = 0.0
                else:
                    f[d] = f[d] / total * s
                vdot[d] = (alpha_v * (beta_v * (goal[d] - x[d]) - v[d]) + a[d] * f[d] + ct[d]) / tau

            ok = True
            for d in range(3):
                X[k, d] = x[d]
                V[k, d] = v[d]
                VD[k, d] = vdot[d]
                RAW[k, d] = raw[d]
                CT[k, d] = ct[d]
                if not (isfinite(vdot[d]) and isfinite(x[d])):
                    ok = False
            S[k] = s
            SD[k] = dist
            if not ok:
                last = k + 1
                break
            for d in range(3):
                v[d] = v[d] + dt * vdot[d]
                x[d] = x[d] + dt * v[d] / tau
            s = s + dt * (-alpha_s * s / tau)

    if last < n:
        return (X_arr[:last], V_arr[:last], VD_arr[:last], S_arr[:last],
                RAW_arr[:last], CT_arr[:last], SD_arr[:last])
    return X_arr, V_arr, VD_arr, S_arr, RAW_arr, CT_arr, SD_arr
