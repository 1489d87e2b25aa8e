"""Compiled per-column kernels for the banded matrix algebra.

All kernels loop over grid columns in order; panels are laid out as
``data[column, row, band]`` where entry ``(i, j)`` of a column block lives in
``data[column, i, j - j_m(i)]`` with the unclamped ``j_m(i) = ceil((alpha*i - gamma_p)/beta)``.
"""
import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _jm(i, alpha, beta, gp):
    return -((gp - alpha * i) // beta)


@njit(cache=True, inline="always")
def _jp(i, alpha, beta, gm):
    return (alpha * i + gm) // beta


@njit(cache=True)
def apply_general(data, x, y, alpha, beta, gm, gp):
    nc, nr, _ = data.shape
    ncol = x.shape[1]
    for c in range(nc):
        for i in range(nr):
            jm = _jm(i, alpha, beta, gp)
            lo = max(0, jm)
            hi = min(ncol, _jp(i, alpha, beta, gm) + 1)
            s = 0.0
            for j in range(lo, hi):
                s += data[c, i, j - jm] * x[c, j]
            y[c, i] = s


@njit(cache=True)
def apply_tridiagonal(data, x, y):
    nc, n, _ = data.shape
    for c in range(nc):
        if n == 1:
            y[c, 0] = data[c, 0, 1] * x[c, 0]
            continue
        y[c, 0] = data[c, 0, 1] * x[c, 0] + data[c, 0, 2] * x[c, 1]
        for i in range(1, n - 1):
            y[c, i] = (data[c, i, 0] * x[c, i - 1] + data[c, i, 1] * x[c, i]
                       + data[c, i, 2] * x[c, i + 1])
        y[c, n - 1] = data[c, n - 1, 0] * x[c, n - 2] + data[c, n - 1, 1] * x[c, n - 1]


@njit(cache=True)
def accumulate(out, src, scale, alpha, beta, gm_s, gp_s, gp_o, ncol):
    """out += scale * src, src re-indexed into out's (wider) pattern."""
    nc, nr, _ = src.shape
    for c in range(nc):
        for i in range(nr):
            jm_s = _jm(i, alpha, beta, gp_s)
            jm_o = _jm(i, alpha, beta, gp_o)
            lo = max(0, jm_s)
            hi = min(ncol, _jp(i, alpha, beta, gm_s) + 1)
            for j in range(lo, hi):
                out[c, i, j - jm_o] += scale * src[c, i, j - jm_s]


@njit(cache=True)
def transpose(src, dst, alpha, beta, gm, gp, ncol):
    """dst holds the transpose pattern (beta, alpha, gp, gm)."""
    nc, nr, _ = src.shape
    for c in range(nc):
        for i in range(nr):
            jm = _jm(i, alpha, beta, gp)
            lo = max(0, jm)
            hi = min(ncol, _jp(i, alpha, beta, gm) + 1)
            for j in range(lo, hi):
                # row j of the transpose, pattern (beta, alpha, gm_t=gp, gp_t=gm)
                jm_t = _jm(j, beta, alpha, gm)
                dst[c, j, i - jm_t] = src[c, i, j - jm]


@njit(cache=True)
def matmul(a, b, out, aa, ba, gma, gpa, ab, bb, gmb, gpb, ac, bc, gpc, ncol_a, ncol_b):
    nc, nr, _ = a.shape
    for c in range(nc):
        for i in range(nr):
            jm_a = _jm(i, aa, ba, gpa)
            jm_c = _jm(i, ac, bc, gpc)
            for k in range(max(0, jm_a), min(ncol_a, _jp(i, aa, ba, gma) + 1)):
                aik = a[c, i, k - jm_a]
                if aik == 0.0:
                    continue
                jm_b = _jm(k, ab, bb, gpb)
                for j in range(max(0, jm_b), min(ncol_b, _jp(k, ab, bb, gmb) + 1)):
                    out[c, i, j - jm_c] += aik * b[c, k, j - jm_b]


@njit(cache=True)
def to_lapack_band(data, w, alpha, beta, gm, gp, kl):
    """Scatter square panels into row-offset band storage w[c, i, j - i + kl]."""
    nc, n, _ = data.shape
    for c in range(nc):
        for i in range(n):
            jm = _jm(i, alpha, beta, gp)
            for j in range(max(0, jm), min(n, _jp(i, alpha, beta, gm) + 1)):
                w[c, i, j - i + kl] = data[c, i, j - jm]


@njit(cache=True)
def band_lu(w, piv, kl, ku):
    """In-place banded LU with partial pivoting; returns first singular column or -1.

    Row i stores columns j in [i - kl, i + kl + ku] at w[c, i, j - i + kl].  Row
    interchanges act on the not-yet-eliminated part only, so multipliers stay
    where they were computed (LINPACK/LAPACK convention).
    """
    nc, n, _ = w.shape
    for c in range(nc):
        for k in range(n):
            last = min(n - 1, k + kl)
            p = k
            best = abs(w[c, k, kl])
            for r in range(k + 1, last + 1):
                v = abs(w[c, r, k - r + kl])
                if v > best:
                    best = v
                    p = r
            piv[c, k] = p
            if best == 0.0:
                return c
            jend = min(n - 1, k + kl + ku)
            if p != k:
                for j in range(k, jend + 1):
                    tmp = w[c, k, j - k + kl]
                    w[c, k, j - k + kl] = w[c, p, j - p + kl]
                    w[c, p, j - p + kl] = tmp
            pivot = w[c, k, kl]
            for r in range(k + 1, last + 1):
                m = w[c, r, k - r + kl] / pivot
                w[c, r, k - r + kl] = m
                if m != 0.0:
                    for j in range(k + 1, jend + 1):
                        w[c, r, j - r + kl] -= m * w[c, k, j - k + kl]
    return -1


@njit(cache=True)
def band_lu_solve(w, piv, y, kl, ku):
    nc, n, _ = w.shape
    for c in range(nc):
        for k in range(n):
            p = piv[c, k]
            if p != k:
                tmp = y[c, k]
                y[c, k] = y[c, p]
                y[c, p] = tmp
            yk = y[c, k]
            for r in range(k + 1, min(n - 1, k + kl) + 1):
                y[c, r] -= w[c, r, k - r + kl] * yk
        for i in range(n - 1, -1, -1):
            s = y[c, i]
            for j in range(i + 1, min(n - 1, i + kl + ku) + 1):
                s -= w[c, i, j - i + kl] * y[c, j]
            y[c, i] = s / w[c, i, kl]


@njit(cache=True)
def thomas_factor(data, fac):
    """fac[c, i] = (sub-diagonal, 1/pivot, modified super-diagonal); returns bad column or -1."""
    nc, n, _ = data.shape
    for c in range(nc):
        cprev = 0.0
        for i in range(n):
            a = data[c, i, 0] if i > 0 else 0.0
            denom = data[c, i, 1] - a * cprev
            if denom == 0.0:
                return c
            inv = 1.0 / denom
            cprev = data[c, i, 2] * inv if i < n - 1 else 0.0
            fac[c, i, 0] = a
            fac[c, i, 1] = inv
            fac[c, i, 2] = cprev
    return -1


@njit(cache=True)
def thomas_solve(fac, y, x):
    nc, n, _ = fac.shape
    for c in range(nc):
        prev = 0.0
        for i in range(n):
            prev = (y[c, i] - fac[c, i, 0] * prev) * fac[c, i, 1]
            x[c, i] = prev
        for i in range(n - 2, -1, -1):
            x[c, i] -= fac[c, i, 2] * x[c, i + 1]


@njit(cache=True)
def stream_triad(a, b, c, scalar):
    for i in range(a.size):
        a[i] = b[i] + scalar * c[i]
