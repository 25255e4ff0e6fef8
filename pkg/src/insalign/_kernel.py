"""Compiled inner loop of :func:`insalign.ekf.ekf_run`.

Mirrors :func:`insalign.ekf.ekf_propagate` and :func:`insalign.ekf.ekf_update_zupt`
step for step; the test suite checks the two against each other.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _exp3(v):
    t2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
    t = np.sqrt(t2)
    if t < 1e-8:
        a = 1.0 - t2 / 6.0
        b = 0.5 - t2 / 24.0
    else:
        a = np.sin(t) / t
        b = (1.0 - np.cos(t)) / t2
    k = np.zeros((3, 3))
    k[0, 1] = -v[2]
    k[0, 2] = v[1]
    k[1, 0] = v[2]
    k[1, 2] = -v[0]
    k[2, 0] = -v[1]
    k[2, 1] = v[0]
    return np.eye(3) + a * k + b * (k @ k)


@njit(cache=True)
def _skew_into(m, r0, c0, v, s):
    m[r0 + 0, c0 + 1] = -s * v[2]
    m[r0 + 0, c0 + 2] = s * v[1]
    m[r0 + 1, c0 + 0] = s * v[2]
    m[r0 + 1, c0 + 2] = -s * v[0]
    m[r0 + 2, c0 + 0] = -s * v[1]
    m[r0 + 2, c0 + 1] = s * v[0]


@njit(cache=True)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@njit(cache=True)
def run_batch(gyro, accel, seg, dt, k0, every, n_epochs, C, v, bg, ba, P, q, r, w_ie, g_n,
              tan_lat, re_h, rn_h, record, hC, hv, hbg, hba, hP, hin, max_innov):
    nb = C.shape[0]
    eye12 = np.eye(12)
    qd = np.diag(q * dt)
    R = np.diag(r)
    for b in range(nb):
        c = C[b].copy()
        vb = v[b].copy()
        gb = bg[b].copy()
        ab = ba[b].copy()
        p = P[b].copy()
        if record:
            hC[b, 0] = c
            hv[b, 0] = vb
            hbg[b, 0] = gb
            hba[b, 0] = ab
            for i in range(12):
                hP[b, 0, i] = p[i, i]
        for j in range(1, n_epochs + 1):
            for k in range(k0 + (j - 1) * every, k0 + j * every):
                w_en = np.array([vb[2] / re_h, vb[2] * tan_lat / re_h, -vb[0] / rn_h])
                w_in = w_ie + w_en
                w_cor = 2.0 * w_ie + w_en
                cor = _cross(w_cor, vb)
                w0 = gyro[k] - gb - c.T @ w_in
                fk = accel[k] - ab
                a0 = c @ fk + g_n - cor
                if seg[k] == seg[k + 1]:
                    cp = c @ _exp3(dt * w0)
                    w1 = gyro[k + 1] - gb - cp.T @ w_in
                    c1 = c @ _exp3(0.5 * dt * (w0 + w1))
                    a1 = c1 @ (accel[k + 1] - ab) + g_n - cor
                    v1 = vb + 0.5 * dt * (a0 + a1)
                else:
                    c1 = c @ _exp3(dt * w0)
                    v1 = vb + dt * a0
                # first-order transition from the state at the start of the interval
                phi = eye12.copy()
                _skew_into(phi, 0, 0, w_in, -dt)
                phi[0:3, 6:9] = dt * c
                _skew_into(phi, 3, 0, c @ fk, dt)
                _skew_into(phi, 3, 3, w_cor, -dt)
                phi[3:6, 9:12] = -dt * c
                p = phi @ p @ phi.T + qd
                c = c1
                vb = v1
            # zero-velocity update
            s = p[3:6, 3:6] + R
            kg = np.ascontiguousarray(p[:, 3:6]) @ np.linalg.inv(s)
            x = kg @ vb
            ikh = eye12.copy()
            ikh[:, 3:6] -= kg
            p = ikh @ p @ ikh.T + kg @ R @ kg.T
            p = 0.5 * (p + p.T)
            m = _exp3(x[0:3]) @ c
            u, _, vt = np.linalg.svd(m)
            c = u @ vt
            if np.linalg.det(c) < 0:
                u[:, 2] = -u[:, 2]
                c = u @ vt
            nrm = np.sqrt(vb[0] ** 2 + vb[1] ** 2 + vb[2] ** 2)
            if nrm > max_innov[b]:
                max_innov[b] = nrm
            if record:
                hin[b, j] = vb
            vb = vb - x[3:6]
            gb = gb - x[6:9]
            ab = ab - x[9:12]
            if record:
                hC[b, j] = c
                hv[b, j] = vb
                hbg[b, j] = gb
                hba[b, j] = ab
                for i in range(12):
                    hP[b, j, i] = p[i, i]
        C[b] = c
        v[b] = vb
        bg[b] = gb
        ba[b] = ab
        P[b] = p
