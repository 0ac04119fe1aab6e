"""Cache-blocked forward and gradient kernels, compiled with numba.

Rows are processed in blocks of ``BLOCK``; inside a block each node column is
computed for all rows at once, so the working set stays in cache and the
inner loops vectorise. Edges are stored as a CSR list over destination
columns. The numpy engine in ``engine.py`` is the reference implementation.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .genome import TRANSFERS, Transfer

CODES = {t: i for i, t in enumerate(TRANSFERS)}
SIGMOID, TANH, ABS, GAUSSIAN, IDENTITY, SINE, RELU = (CODES[t] for t in (
    Transfer.SIGMOID, Transfer.TANH, Transfer.ABS, Transfer.GAUSSIAN,
    Transfer.IDENTITY, Transfer.SINE, Transfer.RELU))
GAUSS_CLAMP = 700.0
BLOCK = 256


# -- vectorisable elementary functions -----------------------------------------------
#
# numba has no vector math library here, so math.exp/tanh/sin would be scalar libm
# calls and dominate the run time. The loops below are branch-free polynomials that
# LLVM vectorises; all are accurate to a few ulp.

LOG2E = 1.4426950408889634
LN2_HI = 6.93147180369123816490e-01
LN2_LO = 1.90821492927058770002e-10
TWO_OVER_PI = 0.6366197723675814
PIO2_1 = 1.57079632673412561417e+00
PIO2_2 = 6.07710050630396597660e-11
PIO2_3 = 2.02226624871116645580e-21
TRIG_LIMIT = 1e5
EXP_LO, EXP_HI = -708.0, 709.0


@njit(cache=True, inline="always")
def _exp_reduce(x):
    """Return (k, p) with exp(x) = 2**k * (1 + p); needs x in [EXP_LO, EXP_HI]."""
    kf = np.floor(x * LOG2E + 0.5)
    kf = 0.0 if kf != kf else kf
    r = (x - kf * LN2_HI) - kf * LN2_LO
    p = 1.0 / 6227020800.0
    p = p * r + 1.0 / 479001600.0
    p = p * r + 1.0 / 39916800.0
    p = p * r + 1.0 / 3628800.0
    p = p * r + 1.0 / 362880.0
    p = p * r + 1.0 / 40320.0
    p = p * r + 1.0 / 5040.0
    p = p * r + 1.0 / 720.0
    p = p * r + 1.0 / 120.0
    p = p * r + 1.0 / 24.0
    p = p * r + 1.0 / 6.0
    p = p * r + 0.5
    p = p * r + 1.0
    return (np.int64(kf) + 1023) << 52, p * r


@njit(cache=True)
def vexp(x, out, m, K):
    """out <- exp(x). ``K`` is int64 scratch; 2**k is assembled in its bits."""
    S = K.view(np.float64)
    far = False
    for i in range(m):
        t = x[i]
        far |= not (EXP_LO <= t <= EXP_HI)
        t = EXP_HI if t > EXP_HI else t
        t = EXP_LO if t < EXP_LO else t
        K[i], out[i] = _exp_reduce(t)
    for i in range(m):
        out[i] = S[i] + S[i] * out[i]
    if far:
        for i in range(m):
            if not (EXP_LO <= x[i] <= EXP_HI):
                out[i] = math.exp(x[i])


@njit(cache=True)
def vtanh(x, out, m, K):
    S = K.view(np.float64)
    for i in range(m):
        y = -2.0 * abs(x[i])
        y = -60.0 if y < -60.0 else y
        K[i], out[i] = _exp_reduce(y)
    for i in range(m):
        s = S[i]
        e = s * out[i] + (s - 1.0)         # expm1(-2|x|), accurate near 0
        v = (0.0 - e) / (2.0 + e)
        xi = x[i]
        out[i] = v if xi > 0.0 else (-v if xi < 0.0 else xi)     # keeps +-0 and NaN


@njit(cache=True)
def vsin(x, out, m, shift):
    """sin(x) for shift 0, cos(x) for shift 1."""
    big = False
    for i in range(m):
        kf = np.floor(x[i] * TWO_OVER_PI + 0.5)
        kf = 0.0 if not abs(kf) < 1e6 else kf
        r = ((x[i] - kf * PIO2_1) - kf * PIO2_2) - kf * PIO2_3
        r2 = r * r
        sp = -1.0 / 355687428096000.0
        sp = sp * r2 + 1.0 / 1307674368000.0
        sp = sp * r2 - 1.0 / 6227020800.0
        sp = sp * r2 + 1.0 / 39916800.0
        sp = sp * r2 - 1.0 / 362880.0
        sp = sp * r2 + 1.0 / 5040.0
        sp = sp * r2 - 1.0 / 120.0
        sp = sp * r2 + 1.0 / 6.0
        sn = r - r * r2 * sp
        cp = 1.0 / 6402373705728000.0
        cp = cp * r2 - 1.0 / 20922789888000.0
        cp = cp * r2 + 1.0 / 87178291200.0
        cp = cp * r2 - 1.0 / 479001600.0
        cp = cp * r2 + 1.0 / 3628800.0
        cp = cp * r2 - 1.0 / 40320.0
        cp = cp * r2 + 1.0 / 720.0
        cp = cp * r2 - 1.0 / 24.0
        cp = cp * r2 + 0.5
        cs = 1.0 - r2 * cp
        q = (np.int64(kf) + shift) & 3
        v = sn if (q & 1) == 0 else cs
        out[i] = -v if q >= 2 else v
        big |= not abs(x[i]) <= TRIG_LIMIT
    if big:
        for i in range(m):
            if not abs(x[i]) <= TRIG_LIMIT:
                out[i] = math.sin(x[i]) if shift == 0 else math.cos(x[i])


@njit(cache=True)
def _act(code, z, a, m, T, K):
    if code == SIGMOID:
        for i in range(m):
            T[i] = -abs(z[i])
        vexp(T, a, m, K)
        for i in range(m):
            e = a[i]
            a[i] = (1.0 if z[i] >= 0.0 else e) / (1.0 + e)
    elif code == TANH:
        vtanh(z, a, m, K)
    elif code == ABS:
        for i in range(m):
            a[i] = abs(z[i])
    elif code == GAUSSIAN:
        for i in range(m):
            q = z[i] * z[i]
            T[i] = -0.5 * (GAUSS_CLAMP if q > GAUSS_CLAMP else q)
        vexp(T, a, m, K)
    elif code == SINE:
        vsin(z, a, m, 0)
    elif code == RELU:
        for i in range(m):
            a[i] = 0.0 if z[i] <= 0.0 else z[i]
    else:
        for i in range(m):
            a[i] = z[i]


@njit(cache=True)
def _scale_by_deriv(code, z, a, g, m, T, K):
    """g <- g * f'(z), in place."""
    if code == SIGMOID:
        for i in range(m):
            g[i] *= a[i] * (1.0 - a[i])
    elif code == TANH:
        for i in range(m):
            g[i] *= 1.0 - a[i] * a[i]
    elif code == ABS:
        for i in range(m):
            g[i] *= 1.0 if z[i] > 0.0 else (-1.0 if z[i] < 0.0 else 0.0)
    elif code == GAUSSIAN:
        for i in range(m):
            g[i] *= -z[i] * a[i] if z[i] * z[i] < GAUSS_CLAMP else 0.0
    elif code == SINE:
        vsin(z, T, m, 1)
        for i in range(m):
            g[i] *= T[i]
    elif code == RELU:
        for i in range(m):
            g[i] *= 1.0 if z[i] > 0.0 else 0.0


@njit(cache=True)
def transfer_values(code, z):
    """Kernel transfer applied to a 1-D array; exposed for testing."""
    a = np.empty_like(z)
    _act(code, z, a, z.shape[0], np.empty_like(z), np.empty(z.shape[0], np.int64))
    return a


@njit(cache=True)
def _block_forward(batch, r0, m, lin_w, lin_b, has_lin, indptr, src, widx, w, codes, Z, A, T, K):
    d = batch.shape[1]
    for i in range(d):
        row = A[i]
        if has_lin:
            for t in range(m):
                row[t] = lin_b[i]
            for j in range(d):
                c = lin_w[j, i]
                for t in range(m):
                    row[t] += batch[r0 + t, j] * c
        else:
            for t in range(m):
                row[t] = batch[r0 + t, i]
        for t in range(m):
            Z[i, t] = row[t]
    for col in range(d, codes.shape[0]):
        z = Z[col]
        for t in range(m):
            z[t] = 0.0
        for k in range(indptr[col], indptr[col + 1]):
            a = A[src[k]]
            c = w[widx[k]]
            for t in range(m):
                z[t] += a[t] * c
        _act(codes[col], z, A[col], m, T, K)


@njit(cache=True)
def forward_rows(batch, lin_w, lin_b, has_lin, indptr, src, widx, w, codes, out_start, out_dim):
    n, B = codes.shape[0], batch.shape[0]
    Z = np.empty((n, BLOCK))
    A = np.empty((n, BLOCK))
    T = np.empty(BLOCK)
    K = np.empty(BLOCK, np.int64)
    out = np.empty((B, out_dim))
    for r0 in range(0, B, BLOCK):
        m = min(BLOCK, B - r0)
        _block_forward(batch, r0, m, lin_w, lin_b, has_lin, indptr, src, widx, w, codes, Z, A, T, K)
        for j in range(out_dim):
            for t in range(m):
                out[r0 + t, j] = A[out_start + j, t]
    return out


@njit(cache=True, fastmath={"reassoc", "contract"})
def gradient_rows(batch, d_out, lin_w, lin_b, has_lin, indptr, src, widx, w, codes,
                  out_start, n_edge_params):
    """Summed dLoss/dweights; the forward pass is recomputed block by block."""
    n, B, d = codes.shape[0], batch.shape[0], batch.shape[1]
    Z = np.empty((n, BLOCK))
    A = np.empty((n, BLOCK))
    T = np.empty(BLOCK)
    K = np.empty(BLOCK, np.int64)
    dA = np.empty((n, BLOCK))
    grad = np.zeros(w.shape[0])
    for r0 in range(0, B, BLOCK):
        m = min(BLOCK, B - r0)
        _block_forward(batch, r0, m, lin_w, lin_b, has_lin, indptr, src, widx, w, codes, Z, A, T, K)
        dA[:, :m] = 0.0
        for j in range(d_out.shape[1]):
            for t in range(m):
                dA[out_start + j, t] = d_out[r0 + t, j]
        for col in range(n - 1, d - 1, -1):
            g = dA[col]
            _scale_by_deriv(codes[col], Z[col], A[col], g, m, T, K)
            for k in range(indptr[col], indptr[col + 1]):
                a = A[src[k]]
                da = dA[src[k]]
                c = w[widx[k]]
                s = 0.0
                for t in range(m):
                    s += a[t] * g[t]
                    da[t] += c * g[t]
                grad[widx[k]] += s
        if has_lin:
            for i in range(d):
                g = dA[i]
                for j in range(d):
                    s = 0.0
                    for t in range(m):
                        s += batch[r0 + t, j] * g[t]
                    grad[n_edge_params + j * d + i] += s
                s = 0.0
                for t in range(m):
                    s += g[t]
                grad[n_edge_params + d * d + i] += s
    return grad
