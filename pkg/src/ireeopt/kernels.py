"""Fused loss/gradient kernels for the SE-RBF network.

One call evaluates the scaled training loss and, optionally, its gradient in
physical units (m, Hz, W).  ``w`` weights traffic samples and ``wc`` weights
per-sample capacity when forming totals.  ``loss_grad_numba`` and ``loss_grad_numpy`` run the
same arithmetic; the numba path fuses the (station, sample) loops and is the
default.  ``IREEOPT_BACKEND=numpy`` selects the vectorised fallback.

Objective kinds: ``KIND_MATCH`` scores -min(C, D)(1 - xi)/K and
``KIND_CAPACITY`` scores -C/K.  The penalty is
omega * [flag * max(zeta_min - zeta, 0) + max(sum B/B_max - 1, 0) + max(sum P/P_max - 1, 0)].
"""

import math

import numpy as np

from ._accel import backend, njit

KIND_MATCH = 0
KIND_CAPACITY = 1

# layout of the scalar output vector
OUT_UTILITY, OUT_POWER, OUT_PENALTY, OUT_C_TOT, OUT_XI, OUT_ZETA = range(6)
N_OUT = 6

_LN2 = math.log(2.0)
_FLOOR = 1e-300


@njit(cache=True)
def _match_terms_nb(c, d, w, wc, d_tot, k_scale, kind, zeta_min, zeta_flag, omega, out, g_c):
    """Fill ``out`` with utility/penalty scalars and ``g_c`` with d(loss)/dc_m."""
    m_count = c.shape[0]
    c_tot = 0.0
    for m in range(m_count):
        c_tot += c[m]
    c_tot *= wc
    out[OUT_C_TOT] = c_tot
    if kind == KIND_CAPACITY:
        out[OUT_UTILITY] = -c_tot / k_scale
        out[OUT_XI] = np.nan
        out[OUT_ZETA] = np.nan
        for m in range(m_count):
            g_c[m] = -wc / k_scale
        return
    xi = 0.0
    hbar = 0.0
    h = np.empty(m_count)
    for m in range(m_count):
        p = c[m] * wc / c_tot
        q = d[m] * w / d_tot
        mid = 0.5 * (p + q)
        pf = max(p, _FLOOR)
        mf = max(mid, _FLOOR)
        if p > 0.0:
            xi += 0.5 * p * math.log(pf / mf) / _LN2
        if q > 0.0:
            xi += 0.5 * q * math.log(max(q, _FLOOR) / mf) / _LN2
        h[m] = 0.5 * math.log(pf / mf) / _LN2
        hbar += p * h[m]
    xi = min(max(xi, 0.0), 1.0)
    out[OUT_XI] = xi
    c_branch = c_tot <= d_tot
    if c_branch:
        util = -c_tot * (1.0 - xi) / k_scale
        zeta = c_tot * (1.0 - xi) / d_tot
    else:
        util = -d_tot * (1.0 - xi) / k_scale
        zeta = 1.0 - xi
    out[OUT_UTILITY] = util
    out[OUT_ZETA] = zeta
    zeta_active = zeta_flag != 0 and omega > 0.0 and zeta_min - zeta > 0.0
    if zeta_active:
        out[OUT_PENALTY] += omega * (zeta_min - zeta)
    for m in range(m_count):
        dxi = (wc / c_tot) * (h[m] - hbar)
        if c_branch:
            du = -(wc * (1.0 - xi) - c_tot * dxi) / k_scale
        else:
            du = d_tot * dxi / k_scale
        g = du
        if zeta_active:
            # zeta = -(K/D) * util
            g += omega * (k_scale / d_tot) * du
        g_c[m] = g


@njit(cache=True)
def loss_grad_numba(
    loc, bw, pw, pts, w, wc, d, d_tot, shape, height_sq, alpha, gamma, beta, b_noise,
    lam, p_circuit, eta, omega, k_scale, zeta_min, zeta_flag, kind,
    b_max, p_max, want_grad,
):
    n_bs = loc.shape[0]
    m_count = pts.shape[0]
    g11 = shape[0, 0]
    g12 = shape[0, 1]
    g22 = shape[1, 1]
    half_a = 0.5 * alpha
    out = np.zeros(N_OUT)
    grad = np.zeros(4 * n_bs)
    se = np.empty((n_bs, m_count))
    inv = np.empty((n_bs, m_count))
    dsq = np.empty((n_bs, m_count))
    c = np.zeros(m_count)
    for n in range(n_bs):
        xn = loc[n, 0]
        yn = loc[n, 1]
        p = pw[n]
        b = bw[n]
        for m in range(m_count):
            dx = pts[m, 0] - xn
            dy = pts[m, 1] - yn
            q = g11 * dx * dx + 2.0 * g12 * dx * dy + g22 * dy * dy + height_sq
            if q > 0.0:
                qa = math.exp(half_a * math.log(q))
            else:
                qa = 0.0
            lam_nm = b_noise * (gamma * qa + beta)
            s = math.log1p(p / lam_nm) / _LN2
            se[n, m] = s
            c[m] += b * s
            if want_grad:
                inv[n, m] = 1.0 / (_LN2 * (lam_nm + p))
                # ds/dq = ds/dLambda * dLambda/dq
                if q > 0.0:
                    dsq[n, m] = -p / (lam_nm * _LN2 * (lam_nm + p)) * b_noise * gamma * half_a * qa / q
                else:
                    dsq[n, m] = 0.0
    p_sum = 0.0
    b_sum = 0.0
    for n in range(n_bs):
        p_sum += pw[n]
        b_sum += bw[n]
    p_t = lam * p_sum + n_bs * p_circuit
    out[OUT_POWER] = eta * p_t / k_scale
    b_excess = b_sum / b_max - 1.0
    p_excess = p_sum / p_max - 1.0
    if omega > 0.0:
        if b_excess > 0.0:
            out[OUT_PENALTY] += omega * b_excess
        if p_excess > 0.0:
            out[OUT_PENALTY] += omega * p_excess
    g_c = np.empty(m_count)
    _match_terms_nb(c, d, w, wc, d_tot, k_scale, kind, zeta_min, zeta_flag, omega, out, g_c)
    if not want_grad:
        return out, grad
    for n in range(n_bs):
        xn = loc[n, 0]
        yn = loc[n, 1]
        b = bw[n]
        gx = 0.0
        gy = 0.0
        gb = 0.0
        gp = 0.0
        for m in range(m_count):
            gm = g_c[m]
            gb += gm * se[n, m]
            gp += gm * inv[n, m]
            r = gm * dsq[n, m]
            dx = pts[m, 0] - xn
            dy = pts[m, 1] - yn
            # dq/dx_n = -2 (g11 dx + g12 dy)
            gx += r * (g11 * dx + g12 * dy)
            gy += r * (g12 * dx + g22 * dy)
        grad[2 * n] = -2.0 * b * gx
        grad[2 * n + 1] = -2.0 * b * gy
        gb_tot = gb
        gp_tot = b * gp + eta * lam / k_scale
        if omega > 0.0 and b_excess > 0.0:
            gb_tot += omega / b_max
        if omega > 0.0 and p_excess > 0.0:
            gp_tot += omega / p_max
        grad[2 * n_bs + n] = gb_tot
        grad[3 * n_bs + n] = gp_tot
    return out, grad


def _match_terms_np(c, d, w, wc, d_tot, k_scale, kind, zeta_min, zeta_flag, omega, out):
    c_tot = float(np.sum(c)) * wc
    out[OUT_C_TOT] = c_tot
    if kind == KIND_CAPACITY:
        out[OUT_UTILITY] = -c_tot / k_scale
        out[OUT_XI] = np.nan
        out[OUT_ZETA] = np.nan
        return np.full(c.shape, -wc / k_scale)
    p = c * wc / c_tot
    q = d * w / d_tot
    mid = 0.5 * (p + q)
    pf = np.maximum(p, _FLOOR)
    mf = np.maximum(mid, _FLOOR)
    h = 0.5 * np.log(pf / mf) / _LN2
    tp = np.where(p > 0.0, p * h, 0.0)
    tq = np.where(q > 0.0, 0.5 * q * np.log(np.maximum(q, _FLOOR) / mf) / _LN2, 0.0)
    xi = min(max(float(np.sum(tp) + np.sum(tq)), 0.0), 1.0)
    out[OUT_XI] = xi
    c_branch = c_tot <= d_tot
    if c_branch:
        out[OUT_UTILITY] = -c_tot * (1.0 - xi) / k_scale
        zeta = c_tot * (1.0 - xi) / d_tot
    else:
        out[OUT_UTILITY] = -d_tot * (1.0 - xi) / k_scale
        zeta = 1.0 - xi
    out[OUT_ZETA] = zeta
    dxi = (wc / c_tot) * (h - float(np.sum(p * h)))
    if c_branch:
        du = -(wc * (1.0 - xi) - c_tot * dxi) / k_scale
    else:
        du = d_tot * dxi / k_scale
    if zeta_flag and omega > 0.0 and zeta_min - zeta > 0.0:
        out[OUT_PENALTY] += omega * (zeta_min - zeta)
        du = du + omega * (k_scale / d_tot) * du
    return du


def loss_grad_numpy(
    loc, bw, pw, pts, w, wc, d, d_tot, shape, height_sq, alpha, gamma, beta, b_noise,
    lam, p_circuit, eta, omega, k_scale, zeta_min, zeta_flag, kind,
    b_max, p_max, want_grad,
):
    n_bs = loc.shape[0]
    g11, g12, g22 = shape[0, 0], shape[0, 1], shape[1, 1]
    half_a = 0.5 * alpha
    out = np.zeros(N_OUT)
    dx = pts[None, :, 0] - loc[:, 0, None]
    dy = pts[None, :, 1] - loc[:, 1, None]
    q = g11 * dx * dx + 2.0 * g12 * dx * dy + g22 * dy * dy + height_sq
    with np.errstate(divide="ignore"):
        qa = np.where(q > 0.0, np.exp(half_a * np.log(q)), 0.0)
    lam_nm = b_noise * (gamma * qa + beta)
    pcol = pw[:, None]
    se = np.log1p(pcol / lam_nm) / _LN2
    c = bw @ se
    p_sum = float(np.sum(pw))
    b_sum = float(np.sum(bw))
    out[OUT_POWER] = eta * (lam * p_sum + n_bs * p_circuit) / k_scale
    b_excess = b_sum / b_max - 1.0
    p_excess = p_sum / p_max - 1.0
    if omega > 0.0:
        if b_excess > 0.0:
            out[OUT_PENALTY] += omega * b_excess
        if p_excess > 0.0:
            out[OUT_PENALTY] += omega * p_excess
    g_c = _match_terms_np(c, d, w, wc, d_tot, k_scale, kind, zeta_min, zeta_flag, omega, out)
    grad = np.zeros(4 * n_bs)
    if not want_grad:
        return out, grad
    inv = 1.0 / (_LN2 * (lam_nm + pcol))
    with np.errstate(divide="ignore", invalid="ignore"):
        dsq = np.where(
            q > 0.0,
            -pcol / (lam_nm * _LN2 * (lam_nm + pcol)) * b_noise * gamma * half_a * qa / q,
            0.0,
        )
    r = dsq * g_c[None, :]
    grad[0 : 2 * n_bs : 2] = -2.0 * bw * np.sum(r * (g11 * dx + g12 * dy), axis=1)
    grad[1 : 2 * n_bs : 2] = -2.0 * bw * np.sum(r * (g12 * dx + g22 * dy), axis=1)
    gb = se @ g_c
    gp = bw * (inv @ g_c) + eta * lam / k_scale
    if omega > 0.0 and b_excess > 0.0:
        gb = gb + omega / b_max
    if omega > 0.0 and p_excess > 0.0:
        gp = gp + omega / p_max
    grad[2 * n_bs : 3 * n_bs] = gb
    grad[3 * n_bs :] = gp
    return out, grad


def loss_grad(*args, backend_name=None):
    """Dispatch to the numba or numpy kernel according to the backend flag."""
    if backend(backend_name) == "numba":
        return loss_grad_numba(*args)
    return loss_grad_numpy(*args)
