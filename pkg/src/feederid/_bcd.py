"""Compiled block coordinate descent kernel for paired-group Lasso problems.

Problem per row ``t``:  min_s ||c_t - B s||^2 + lam * sum_n ||s_{2n:2n+2}||_2.
Rows are solved independently, which keeps results identical for any
thread count.
"""
import math

import numba
import numpy as np

numba.config.THREADING_LAYER = "workqueue"

_ROOT_TOL = 1e-12
_EIG_FLOOR = 1e-14


@numba.njit(cache=True)
def group_update(g0, g1, mu0, mu1, q00, q01, q10, q11, lam):
    """Exact 2-D minimizer of ||rho - B_n u||^2 + lam ||u|| given g = B_n^T rho.

    ``B_n^T B_n = Q diag(mu) Q^T`` with Q columns (q00, q10), (q01, q11).
    Returns (u0, u1).
    """
    top = max(mu0, mu1)
    if top <= 0.0:
        return 0.0, 0.0
    keep0 = mu0 > _EIG_FLOOR * top
    keep1 = mu1 > _EIG_FLOOR * top
    # eigen-coordinates; components outside range(H) are round-off
    a0 = q00 * g0 + q10 * g1 if keep0 else 0.0
    a1 = q01 * g0 + q11 * g1 if keep1 else 0.0
    m0 = mu0 if keep0 else 0.0
    m1 = mu1 if keep1 else 0.0
    if lam == 0.0:
        b0 = a0 / m0 if keep0 else 0.0
        b1 = a1 / m1 if keep1 else 0.0
        return q00 * b0 + q01 * b1, q10 * b0 + q11 * b1
    if math.isinf(lam):
        return 0.0, 0.0
    c = 0.5 * lam
    gn = math.sqrt(a0 * a0 + a1 * a1)
    if gn <= c:
        return 0.0, 0.0
    mlow = top
    if keep0 and m0 < mlow:
        mlow = m0
    if keep1 and m1 < mlow:
        mlow = m1
    # psi(m) = 1 / sqrt(sum a_k^2 / (mu_k m + c)^2) is increasing; solve psi(m) = 1
    lo = 0.0
    hi = (gn - c) / mlow * (1.0 + 1e-12) + 1e-300
    m = 0.0
    for _ in range(200):
        d0 = m0 * m + c
        d1 = m1 * m + c
        w2 = (a0 / d0) ** 2 + (a1 / d1) ** 2
        val = 1.0 / math.sqrt(w2)
        der = (a0 * a0 * m0 / d0 ** 3 + a1 * a1 * m1 / d1 ** 3) * w2 ** -1.5
        f = val - 1.0
        if f == 0.0:
            break
        if f < 0.0:
            lo = m
        else:
            hi = m
        new = m - f / der if der > 0.0 else -1.0
        if not (new > lo and new < hi):
            new = 0.5 * (lo + hi)
        if abs(new - m) <= _ROOT_TOL * max(new, 1e-300):
            m = new
            break
        m = new
    b0 = a0 * m / (m0 * m + c)
    b1 = a1 * m / (m1 * m + c)
    return q00 * b0 + q01 * b1, q10 * b0 + q11 * b1


@numba.njit(cache=True)
def _solve_row(B, H, mus, Qs, c, s, lam, tol, max_iters):
    m, p = B.shape
    g = p // 2
    r = c.copy()
    for i in range(m):
        acc = 0.0
        for j in range(p):
            acc += B[i, j] * s[j]
        r[i] -= acc
    for sweep in range(1, max_iters + 1):
        change = 0.0
        for n in range(g):
            j = 2 * n
            u0 = s[j]
            u1 = s[j + 1]
            g0 = H[n, 0, 0] * u0 + H[n, 0, 1] * u1
            g1 = H[n, 1, 0] * u0 + H[n, 1, 1] * u1
            for i in range(m):
                g0 += B[i, j] * r[i]
                g1 += B[i, j + 1] * r[i]
            v0, v1 = group_update(g0, g1, mus[n, 0], mus[n, 1],
                                  Qs[n, 0, 0], Qs[n, 0, 1], Qs[n, 1, 0], Qs[n, 1, 1], lam)
            d0 = v0 - u0
            d1 = v1 - u1
            if d0 != 0.0 or d1 != 0.0:
                for i in range(m):
                    r[i] -= B[i, j] * d0 + B[i, j + 1] * d1
                s[j] = v0
                s[j + 1] = v1
                ad = max(abs(d0), abs(d1))
                if ad > change:
                    change = ad
        if change <= tol:
            return sweep, True
    return max_iters, False


@numba.njit(cache=True, parallel=True)
def _solve_rows(B, H, mus, Qs, C, S, lam, tol, max_iters, sweeps, done):
    for t in numba.prange(C.shape[0]):
        k, ok = _solve_row(B, H, mus, Qs, C[t], S[t], lam, tol, max_iters)
        sweeps[t] = k
        done[t] = ok


def solve_batch(B, C, lam, tol, max_iters, S0=None):
    """Solve one problem per row of ``C``; returns (S, done, sweeps_per_row)."""
    B = np.ascontiguousarray(B, dtype=float)
    C = np.ascontiguousarray(np.atleast_2d(C), dtype=float)
    T = C.shape[0]
    g = B.shape[1] // 2
    S = np.zeros((T, 2 * g)) if S0 is None else np.array(S0, dtype=float, copy=True, order="C")
    sweeps = np.zeros(T, dtype=np.int64)
    done = np.ones(T, dtype=np.bool_)
    if g == 0 or T == 0:
        return S, done, sweeps
    H = np.empty((g, 2, 2))
    mus = np.empty((g, 2))
    Qs = np.empty((g, 2, 2))
    for n in range(g):
        Bn = B[:, 2 * n:2 * n + 2]
        H[n] = Bn.T @ Bn
        mus[n], Qs[n] = np.linalg.eigh(H[n])
    _solve_rows(B, H, mus, Qs, C, S, float(lam), float(tol), int(max_iters), sweeps, done)
    return S, done, sweeps
