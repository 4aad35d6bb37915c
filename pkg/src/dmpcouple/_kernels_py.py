"""Pure-Python implementation of the guarded, network-coupled unroll loop.

Mirrors ``_kernels.pyx`` argument for argument; used when the compiled
extension is unavailable and as its reference in tests and benchmarks.
Everything is in the local frame: the movement starts at the origin.
"""

import math

import numpy as np

from .features import MIN_SPEED, TIE_TOL

KIND_CODES = {"sphere": 0, "cube": 1, "cylinder": 2}


def _sdf(kind, dims, q):
    if kind == 0:
        return math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]) - dims[0]
    if kind == 1:
        d0 = abs(q[0]) - dims[0]
        d1 = abs(q[1]) - dims[1]
        d2 = abs(q[2]) - dims[2]
        o0, o1, o2 = max(d0, 0.0), max(d1, 0.0), max(d2, 0.0)
        return math.sqrt(o0 * o0 + o1 * o1 + o2 * o2) + min(max(d0, d1, d2), 0.0)
    radial = math.sqrt(q[0] * q[0] + q[1] * q[1]) - dims[0]
    axial = abs(q[2]) - dims[1]
    o0, o1 = max(radial, 0.0), max(axial, 0.0)
    return math.sqrt(o0 * o0 + o1 * o1) + min(max(radial, axial), 0.0)


def _nearest3(cloud, p):
    diff = cloud - p
    d = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2])
    bucket = np.floor(d / TIE_TOL)
    cand = np.argpartition(bucket, 2)[:3]
    cand = np.flatnonzero(bucket <= bucket[cand].max())
    order = np.lexsort((cand, bucket[cand]))
    return cand[order[:3]]


def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def rollout_mlp(weights, centers, widths, gains, a, goal, tau, dt, n,
                cloud, center, orient, kind, dims,
                W1, b1, W2, b2, W3, b3, in_mean, in_std, out_lo, out_hi,
                guard_flags, guard_width, x_obs, x_goal, sig_eps):
    """Integrate ``n`` states; returns ``(x, v, vdot, s, ct_raw, ct, sdist)``.

    ``v`` is the scaled velocity ``tau * xdot`` and ``vdot`` its time
    derivative; coupling terms are in the local frame.
    """
    alpha_v, beta_v, alpha_s = gains
    X = np.empty((n, 3))
    V = np.empty((n, 3))
    VD = np.empty((n, 3))
    S = np.empty(n)
    CT_RAW = np.empty((n, 3))
    CT = np.empty((n, 3))
    SD = np.empty(n)
    x = np.zeros(3)
    v = np.zeros(3)
    s = 1.0
    feat = np.empty(17)
    for k in range(n):
        idx = _nearest3(cloud, x)
        feat[0:9] = (cloud[idx] - x).ravel()
        crel = center - x
        feat[9:12] = crel
        feat[12:15] = v
        q = (x - center) @ orient
        dist = _sdf(kind, dims, q)
        feat[15] = dist
        speed = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        ncrel = math.sqrt(crel[0] * crel[0] + crel[1] * crel[1] + crel[2] * crel[2])
        if speed / tau < MIN_SPEED or ncrel < 1e-12:
            feat[16] = math.pi / 2
        else:
            c = (v[0] * crel[0] + v[1] * crel[1] + v[2] * crel[2]) / (speed * ncrel)
            feat[16] = math.acos(min(1.0, max(-1.0, c)))

        z = (feat - in_mean) / in_std
        h1 = np.maximum(W1 @ z + b1, 0.0)
        h2 = np.maximum(W2 @ h1 + b2, 0.0)
        z3 = W3 @ h2 + b3
        raw = np.empty(3)
        for d in range(3):
            y = min(max(_sigmoid(z3[d]), sig_eps), 1.0 - sig_eps)
            raw[d] = out_lo[d] + (out_hi[d] - out_lo[d]) * y

        ct = raw.copy()
        if guard_flags[0] and x_obs > x_goal:
            ct[:] = 0.0
        else:
            if guard_flags[1]:
                ct[0] = 0.0
            if guard_flags[2] and x_obs < x[0]:
                ct *= math.exp(-guard_width * (x_obs - x[0]) ** 2)

        psi = np.exp(-widths * (s - centers) ** 2)
        total = psi.sum()
        if total < 1e-10:
            f = np.zeros(3)
        else:
            f = (weights @ psi) / total * s
        vdot = (alpha_v * (beta_v * (goal - x) - v) + a * f + ct) / tau

        X[k] = x
        V[k] = v
        VD[k] = vdot
        S[k] = s
        CT_RAW[k] = raw
        CT[k] = ct
        SD[k] = dist
        if not (np.all(np.isfinite(vdot)) and np.all(np.isfinite(x))):
            return X[:k + 1], V[:k + 1], VD[:k + 1], S[:k + 1], CT_RAW[:k + 1], CT[:k + 1], SD[:k + 1]
        v = v + dt * vdot
        x = x + dt * v / tau
        s = s + dt * (-alpha_s * s / tau)
    return X, V, VD, S, CT_RAW, CT, SD
