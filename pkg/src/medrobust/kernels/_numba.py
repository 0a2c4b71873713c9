"""Fused single-pass numba kernels for the MR and PS moment systems.

Same signatures and parameter layouts as the numpy versions in ``_numpy``;
each row is visited once and the Jacobian is accumulated in place, which
avoids the n x K temporaries of the vectorised path.
"""

import math

import numpy as np
from numba import njit

EXP_CLAMP = 700.0


@njit(cache=True)
def _dot(x, i, beta, off):
    s = 0.0
    for j in range(x.shape[1]):
        s += x[i, j] * beta[off + j]
    return s


@njit(cache=True)
def mr_system(y, a, m, xp, xg, xr, xh, beta, pi_logistic, rho_log):
    n = y.shape[0]
    kp = xp.shape[1]
    kg = xg.shape[1]
    kr = xr.shape[1]
    kh = xh.shape[1]
    o1 = 3
    o2 = o1 + kp
    o3 = o2 + kg
    o4 = o3 + kr
    K = o4 + kh
    th1 = beta[0]
    th2 = beta[1]
    th3 = beta[2]
    G = np.empty((n, K))
    J = np.zeros((K, K))
    d_ea = np.zeros(K)
    d_ry = np.zeros(K)
    d_rm = np.zeros(K)
    d_q = np.zeros(K)
    for i in range(n):
        lin = _dot(xp, i, beta, o1)
        if pi_logistic:
            pi = 1.0 / (1.0 + math.exp(-lin))
            dpi = pi * (1.0 - pi)
        else:
            pi = lin
            dpi = 1.0
        lin = _dot(xr, i, beta, o3)
        if rho_log:
            if lin > EXP_CLAMP:
                lin = EXP_CLAMP
            elif lin < -EXP_CLAMP:
                lin = -EXP_CLAMP
            rho = math.exp(lin)
            drho = rho
        else:
            rho = lin
            drho = 1.0
        g = _dot(xg, i, beta, o2)
        h = _dot(xh, i, beta, o4)
        ai = a[i]
        mi = m[i]
        e_a = ai - pi
        r_y = y[i] - th1 * mi - th2 * ai - g
        r_m = mi - th3 * ai - h
        q = r_m * r_y - rho

        G[i, 0] = e_a * r_y
        G[i, 1] = e_a * q
        G[i, 2] = e_a * r_m
        for j in range(kp):
            G[i, o1 + j] = xp[i, j] * e_a
        for j in range(kg):
            G[i, o2 + j] = xg[i, j] * r_y
        for j in range(kr):
            G[i, o3 + j] = xr[i, j] * drho * q
        for j in range(kh):
            G[i, o4 + j] = xh[i, j] * r_m

        for l in range(K):
            d_ea[l] = 0.0
            d_ry[l] = 0.0
            d_rm[l] = 0.0
        for j in range(kp):
            d_ea[o1 + j] = -dpi * xp[i, j]
        d_ry[0] = -mi
        d_ry[1] = -ai
        for j in range(kg):
            d_ry[o2 + j] = -xg[i, j]
        d_rm[2] = -ai
        for j in range(kh):
            d_rm[o4 + j] = -xh[i, j]
        for l in range(K):
            d_q[l] = r_m * d_ry[l] + r_y * d_rm[l]
        for j in range(kr):
            d_q[o3 + j] -= drho * xr[i, j]

        for l in range(K):
            J[0, l] += r_y * d_ea[l] + e_a * d_ry[l]
            J[1, l] += q * d_ea[l] + e_a * d_q[l]
            J[2, l] += r_m * d_ea[l] + e_a * d_rm[l]
            if d_ea[l] != 0.0:
                for j in range(kp):
                    J[o1 + j, l] += xp[i, j] * d_ea[l]
            if d_ry[l] != 0.0:
                for j in range(kg):
                    J[o2 + j, l] += xg[i, j] * d_ry[l]
            for j in range(kr):
                J[o3 + j, l] += xr[i, j] * drho * d_q[l]
            if d_rm[l] != 0.0:
                for j in range(kh):
                    J[o4 + j, l] += xh[i, j] * d_rm[l]
        if rho_log:
            for j in range(kr):
                for l in range(kr):
                    J[o3 + j, o3 + l] += q * rho * xr[i, j] * xr[i, l]
    for r in range(K):
        for l in range(K):
            J[r, l] /= n
    return G, J


@njit(cache=True)
def ps_system(y, a, m, xp, xh, beta, pi_logistic):
    n = y.shape[0]
    kp = xp.shape[1]
    kh = xh.shape[1]
    o1 = 3
    o4 = o1 + kp
    K = o4 + kh
    th1 = beta[0]
    th2 = beta[1]
    th3 = beta[2]
    G = np.empty((n, K))
    J = np.zeros((K, K))
    d_ea = np.zeros(K)
    d_rm = np.zeros(K)
    for i in range(n):
        lin = _dot(xp, i, beta, o1)
        if pi_logistic:
            pi = 1.0 / (1.0 + math.exp(-lin))
            dpi = pi * (1.0 - pi)
        else:
            pi = lin
            dpi = 1.0
        h = _dot(xh, i, beta, o4)
        ai = a[i]
        mi = m[i]
        e_a = ai - pi
        core = y[i] - th1 * mi
        psi1 = core - th2 * ai
        psi3 = mi - th3 * ai
        r_m = psi3 - h
        psi2 = r_m * core

        G[i, 0] = e_a * psi1
        G[i, 1] = e_a * psi2
        G[i, 2] = e_a * psi3
        for j in range(kp):
            G[i, o1 + j] = xp[i, j] * e_a
        for j in range(kh):
            G[i, o4 + j] = xh[i, j] * r_m

        for l in range(K):
            d_ea[l] = 0.0
            d_rm[l] = 0.0
        for j in range(kp):
            d_ea[o1 + j] = -dpi * xp[i, j]
        d_rm[2] = -ai
        for j in range(kh):
            d_rm[o4 + j] = -xh[i, j]

        for l in range(K):
            J[0, l] += psi1 * d_ea[l]
            J[1, l] += psi2 * d_ea[l] + e_a * core * d_rm[l]
            J[2, l] += psi3 * d_ea[l]
            for j in range(kp):
                J[o1 + j, l] += xp[i, j] * d_ea[l]
            for j in range(kh):
                J[o4 + j, l] += xh[i, j] * d_rm[l]
        J[0, 0] -= e_a * mi
        J[0, 1] -= e_a * ai
        J[1, 0] -= e_a * r_m * mi
        J[2, 2] -= e_a * ai
    for r in range(K):
        for l in range(K):
            J[r, l] /= n
    return G, J
