"""Vectorised numpy assembly of the stacked moment systems.

Every function returns ``(G, J)``: the n x K matrix of per-row moments and the
K x K mean Jacobian dG/dbeta. Parameter layouts are documented per system and
mirrored in ``medrobust.systems``.
"""

import numpy as np
from scipy.special import expit

EXP_CLAMP = 700.0


def _propensity(xp, eta1, pi_logistic):
    lin = xp @ eta1
    if pi_logistic:
        pi = expit(lin)
        return pi, pi * (1.0 - pi)
    return lin, np.ones_like(lin)


def _rho(xr, eta3, rho_log):
    lin = xr @ eta3
    if rho_log:
        rho = np.exp(np.clip(lin, -EXP_CLAMP, EXP_CLAMP))
        return rho, rho
    return lin, np.ones_like(lin)


def _mean_rows(s_deriv, weight=None):
    if weight is None:
        return s_deriv.mean(axis=0)
    return weight.T @ s_deriv / s_deriv.shape[0]


def mr_system(y, a, m, xp, xg, xr, xh, beta, pi_logistic, rho_log):
    """Augmented moments plus nuisance scores.

    beta = (th1, th2, th3, eta1, eta2, eta3, eta4).
    """
    n = y.shape[0]
    kp, kg, kr, kh = xp.shape[1], xg.shape[1], xr.shape[1], xh.shape[1]
    o1 = 3
    o2 = o1 + kp
    o3 = o2 + kg
    o4 = o3 + kr
    K = o4 + kh
    th1, th2, th3 = beta[0], beta[1], beta[2]
    pi, dpi = _propensity(xp, beta[o1:o2], pi_logistic)
    rho, drho = _rho(xr, beta[o3:o4], rho_log)
    g = xg @ beta[o2:o3]
    h = xh @ beta[o4:K]

    e_a = a - pi
    r_y = y - th1 * m - th2 * a - g
    r_m = m - th3 * a - h
    q = r_m * r_y - rho

    G = np.empty((n, K))
    G[:, 0] = e_a * r_y
    G[:, 1] = e_a * q
    G[:, 2] = e_a * r_m
    G[:, o1:o2] = xp * e_a[:, None]
    G[:, o2:o3] = xg * r_y[:, None]
    G[:, o3:o4] = xr * (drho * q)[:, None]
    G[:, o4:K] = xh * r_m[:, None]

    d_ea = np.zeros((n, K))
    d_ea[:, o1:o2] = -xp * dpi[:, None]
    d_ry = np.zeros((n, K))
    d_ry[:, 0] = -m
    d_ry[:, 1] = -a
    d_ry[:, o2:o3] = -xg
    d_rm = np.zeros((n, K))
    d_rm[:, 2] = -a
    d_rm[:, o4:K] = -xh
    d_q = r_m[:, None] * d_ry + r_y[:, None] * d_rm
    d_q[:, o3:o4] -= xr * drho[:, None]

    J = np.empty((K, K))
    J[0] = _mean_rows(r_y[:, None] * d_ea + e_a[:, None] * d_ry)
    J[1] = _mean_rows(q[:, None] * d_ea + e_a[:, None] * d_q)
    J[2] = _mean_rows(r_m[:, None] * d_ea + e_a[:, None] * d_rm)
    J[o1:o2] = _mean_rows(d_ea, xp)
    J[o2:o3] = _mean_rows(d_ry, xg)
    d_g3 = drho[:, None] * d_q
    if rho_log:
        d_g3[:, o3:o4] += (q * rho)[:, None] * xr
    J[o3:o4] = _mean_rows(d_g3, xr)
    J[o4:K] = _mean_rows(d_rm, xh)
    return G, J


def ps_system(y, a, m, xp, xh, beta, pi_logistic):
    """Unaugmented moments {A - pi} psi plus propensity and mediator scores.

    beta = (th1, th2, th3, eta1, eta4).
    """
    n = y.shape[0]
    kp, kh = xp.shape[1], xh.shape[1]
    o1 = 3
    o4 = o1 + kp
    K = o4 + kh
    th1, th2, th3 = beta[0], beta[1], beta[2]
    pi, dpi = _propensity(xp, beta[o1:o4], pi_logistic)
    h = xh @ beta[o4:K]

    e_a = a - pi
    core = y - th1 * m
    psi1 = core - th2 * a
    psi3 = m - th3 * a
    r_m = psi3 - h
    psi2 = r_m * core

    G = np.empty((n, K))
    G[:, 0] = e_a * psi1
    G[:, 1] = e_a * psi2
    G[:, 2] = e_a * psi3
    G[:, o1:o4] = xp * e_a[:, None]
    G[:, o4:K] = xh * r_m[:, None]

    d_ea = np.zeros((n, K))
    d_ea[:, o1:o4] = -xp * dpi[:, None]
    d_psi1 = np.zeros((n, K))
    d_psi1[:, 0] = -m
    d_psi1[:, 1] = -a
    d_rm = np.zeros((n, K))
    d_rm[:, 2] = -a
    d_rm[:, o4:K] = -xh
    d_psi2 = core[:, None] * d_rm
    d_psi2[:, 0] -= r_m * m
    d_psi3 = np.zeros((n, K))
    d_psi3[:, 2] = -a

    J = np.empty((K, K))
    J[0] = _mean_rows(psi1[:, None] * d_ea + e_a[:, None] * d_psi1)
    J[1] = _mean_rows(psi2[:, None] * d_ea + e_a[:, None] * d_psi2)
    J[2] = _mean_rows(psi3[:, None] * d_ea + e_a[:, None] * d_psi3)
    J[o1:o4] = _mean_rows(d_ea, xp)
    J[o4:K] = _mean_rows(d_rm, xh)
    return G, J


def hines_system(y, a, m, xp, xg, xh, beta, pi_logistic):
    """Moments for the no-unmeasured-confounding augmented G-estimator.

    beta = (th1, th2, th3, eta1, eta2, eta4).
    """
    n = y.shape[0]
    kp, kg, kh = xp.shape[1], xg.shape[1], xh.shape[1]
    o1 = 3
    o2 = o1 + kp
    o4 = o2 + kg
    K = o4 + kh
    th1, th2, th3 = beta[0], beta[1], beta[2]
    pi, dpi = _propensity(xp, beta[o1:o2], pi_logistic)
    g = xg @ beta[o2:o4]
    h = xh @ beta[o4:K]
    e_a = a - pi
    r_y = y - th1 * m - th2 * a - g
    r_m = m - th3 * a - h

    G = np.empty((n, K))
    G[:, 0] = e_a * r_y
    G[:, 1] = r_m * r_y
    G[:, 2] = e_a * r_m
    G[:, o1:o2] = xp * e_a[:, None]
    G[:, o2:o4] = xg * r_y[:, None]
    G[:, o4:K] = xh * r_m[:, None]

    d_ea = np.zeros((n, K))
    d_ea[:, o1:o2] = -xp * dpi[:, None]
    d_ry = np.zeros((n, K))
    d_ry[:, 0] = -m
    d_ry[:, 1] = -a
    d_ry[:, o2:o4] = -xg
    d_rm = np.zeros((n, K))
    d_rm[:, 2] = -a
    d_rm[:, o4:K] = -xh

    J = np.empty((K, K))
    J[0] = _mean_rows(r_y[:, None] * d_ea + e_a[:, None] * d_ry)
    J[1] = _mean_rows(r_y[:, None] * d_rm + r_m[:, None] * d_ry)
    J[2] = _mean_rows(r_m[:, None] * d_ea + e_a[:, None] * d_rm)
    J[o1:o2] = _mean_rows(d_ea, xp)
    J[o2:o4] = _mean_rows(d_ry, xg)
    J[o4:K] = _mean_rows(d_rm, xh)
    return G, J


def bk_system(y, a, m, xg, xh, beta):
    """Normal equations of the two product-of-coefficients regressions.

    beta = (th1, th2, th3, eta2, eta4).
    """
    n = y.shape[0]
    kg, kh = xg.shape[1], xh.shape[1]
    o2 = 3
    o4 = o2 + kg
    K = o4 + kh
    th1, th2, th3 = beta[0], beta[1], beta[2]
    r_y = y - th1 * m - th2 * a - xg @ beta[o2:o4]
    r_m = m - th3 * a - xh @ beta[o4:K]
    wy = np.column_stack([m, a, xg])
    wm = np.column_stack([a, xh])

    G = np.empty((n, K))
    G[:, 0] = m * r_y
    G[:, 1] = a * r_y
    G[:, o2:o4] = xg * r_y[:, None]
    G[:, 2] = a * r_m
    G[:, o4:K] = xh * r_m[:, None]

    J = np.zeros((K, K))
    rows_y = [0, 1] + list(range(o2, o4))
    cols_y = [0, 1] + list(range(o2, o4))
    rows_m = [2] + list(range(o4, K))
    J[np.ix_(rows_y, cols_y)] = -(wy.T @ wy) / n
    J[np.ix_(rows_m, rows_m)] = -(wm.T @ wm) / n
    return G, J


def mr_int_system(y, a, m, xp, xg, xr, xh, weights, beta, pi_logistic, rho_log):
    """Weighted augmented moments with an A*M interaction.

    ``weights`` has shape (n, 4, 3). beta = (th1, th2, th3, zeta, eta1, eta2,
    eta3, eta4, mean_h). The final row estimates the sample mean of h*(X).
    """
    n = y.shape[0]
    kp, kg, kr, kh = xp.shape[1], xg.shape[1], xr.shape[1], xh.shape[1]
    o1 = 4
    o2 = o1 + kp
    o3 = o2 + kg
    o4 = o3 + kr
    o5 = o4 + kh
    K = o5 + 1
    th1, th2, th3, zeta = beta[0], beta[1], beta[2], beta[3]
    pi, dpi = _propensity(xp, beta[o1:o2], pi_logistic)
    rho, drho = _rho(xr, beta[o3:o4], rho_log)
    g = xg @ beta[o2:o3]
    h = xh @ beta[o4:o5]

    e_a = a - pi
    r_y = y - th1 * m - th2 * a - zeta * a * m - g
    r_m = m - th3 * a - h
    q = r_m * r_y - rho
    phi = np.column_stack([e_a * r_y, e_a * q, e_a * r_m])

    d_ea = np.zeros((n, K))
    d_ea[:, o1:o2] = -xp * dpi[:, None]
    d_ry = np.zeros((n, K))
    d_ry[:, 0] = -m
    d_ry[:, 1] = -a
    d_ry[:, 3] = -a * m
    d_ry[:, o2:o3] = -xg
    d_rm = np.zeros((n, K))
    d_rm[:, 2] = -a
    d_rm[:, o4:o5] = -xh
    d_q = r_m[:, None] * d_ry + r_y[:, None] * d_rm
    d_q[:, o3:o4] -= xr * drho[:, None]
    d_phi = np.stack(
        [
            r_y[:, None] * d_ea + e_a[:, None] * d_ry,
            q[:, None] * d_ea + e_a[:, None] * d_q,
            r_m[:, None] * d_ea + e_a[:, None] * d_rm,
        ],
        axis=1,
    )  # n x 3 x K

    G = np.empty((n, K))
    G[:, :4] = np.einsum("irc,ic->ir", weights, phi)
    G[:, o1:o2] = xp * e_a[:, None]
    G[:, o2:o3] = xg * r_y[:, None]
    G[:, o3:o4] = xr * (drho * q)[:, None]
    G[:, o4:o5] = xh * r_m[:, None]
    G[:, o5] = h - beta[o5]

    J = np.zeros((K, K))
    J[:4] = np.einsum("irc,ick->rk", weights, d_phi) / n
    J[o1:o2] = _mean_rows(d_ea, xp)
    J[o2:o3] = _mean_rows(d_ry, xg)
    d_g3 = drho[:, None] * d_q
    if rho_log:
        d_g3[:, o3:o4] += (q * rho)[:, None] * xr
    J[o3:o4] = _mean_rows(d_g3, xr)
    J[o4:o5] = _mean_rows(d_rm, xh)
    J[o5, o4:o5] = xh.mean(axis=0)
    J[o5, o5] = -1.0
    return G, J
