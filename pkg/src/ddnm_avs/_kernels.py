"""Compiled filter kernels shared by every code path that evaluates a DLM.

All sums are explicit loops in a fixed order, so a posterior or log density
computed through the public API, the score ledger, or the composition density
goes through the same floating-point operations.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

Q_FLOOR = 1e-12
LOG_PI = math.log(math.pi)

KIND_ONE_STEP = 0
KIND_KSTEP = 1
KIND_PATH = 2


@njit(cache=True)
def evolve(C, n, delta, beta, k):
    if k == 1:
        return C / delta, beta * n
    dk = 1.0
    bk = 1.0
    for _ in range(k):
        dk *= delta
        bk *= beta
    return C / dk, bk * n


@njit(cache=True)
def forecast(a, R, s, F):
    p = a.shape[0]
    RF = np.empty(p)
    f = 0.0
    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += R[i, j] * F[j]
        RF[i] = acc
        f += F[i] * a[i]
    acc = 0.0
    for i in range(p):
        acc += F[i] * RF[i]
    q = s + acc
    if q < Q_FLOOR:
        q = Q_FLOOR
    return f, q, RF


@njit(cache=True)
def logt(y, dof, loc, scale):
    z2 = (y - loc) ** 2 / scale
    return (
        math.lgamma(0.5 * (dof + 1.0))
        - math.lgamma(0.5 * dof)
        - 0.5 * (math.log(dof * scale) + LOG_PI)
        - 0.5 * (dof + 1.0) * math.log1p(z2 / dof)
    )


@njit(cache=True)
def update(a, R, r, s, y, f, q, RF):
    p = a.shape[0]
    e = y - f
    n = r + 1.0
    s_new = s * (r + e * e / q) / n
    ratio = s_new / s
    m = np.empty(p)
    C = np.empty((p, p))
    for i in range(p):
        Ai = RF[i] / q
        m[i] = a[i] + Ai * e
        for j in range(p):
            C[i, j] = ratio * (R[i, j] - Ai * (RF[j] / q) * q)
    for i in range(p):
        for j in range(i + 1, p):
            v = 0.5 * (C[i, j] + C[j, i])
            C[i, j] = v
            C[j, i] = v
    return m, C, n, s_new


@njit(cache=True)
def advance(X, y, idx, t0, t1, m, C, n, s, delta, beta, kind, k, alpha,
            score, n_inc, rm, rC, rn, rs, rl, head, cnt, incs):
    """Filter times ``t0..t1`` and accumulate discounted score increments.

    The ring buffers (``rm, rC, rn, rs`` for k-step scores, ``rl`` for path
    scores) hold the last ``k`` posteriors or log densities; ``head`` is the
    oldest slot and ``cnt`` the fill level.  They are updated in place.
    Returns the new state, the number of increments written to ``incs``, the
    last 1-step log density and the first time with missing data (or -1).
    """
    p = idx.shape[0]
    F = np.empty(p)
    ell = np.nan
    n_new = 0
    if kind == KIND_KSTEP and cnt == 0:
        rm[0] = m
        rC[0] = C
        rn[0] = n
        rs[0] = s
        head = 0
        cnt = 1
    for t in range(t0, t1 + 1):
        yt = y[t]
        ok = math.isfinite(yt)
        for c in range(p):
            F[c] = X[t, idx[c]]
            if not math.isfinite(F[c]):
                ok = False
        if not ok:
            return m, C, n, s, score, n_inc, head, cnt, n_new, ell, t
        R, r = evolve(C, n, delta, beta, 1)
        f, q, RF = forecast(m, R, s, F)
        ell = logt(yt, r, f, q)
        has_inc = False
        inc = 0.0
        if kind == KIND_ONE_STEP:
            inc = ell
            has_inc = True
            m, C, n, s = update(m, R, r, s, yt, f, q, RF)
        elif kind == KIND_KSTEP:
            if cnt == k:
                Rk, rk = evolve(rC[head], rn[head], delta, beta, k)
                fk, qk, _ = forecast(rm[head], Rk, rs[head], F)
                inc = logt(yt, rk, fk, qk)
                has_inc = True
            m, C, n, s = update(m, R, r, s, yt, f, q, RF)
            if cnt < k:
                slot = (head + cnt) % k
                cnt += 1
            else:
                slot = head
                head = (head + 1) % k
            rm[slot] = m
            rC[slot] = C
            rn[slot] = n
            rs[slot] = s
        else:
            if cnt < k:
                rl[(head + cnt) % k] = ell
                cnt += 1
            else:
                rl[head] = ell
                head = (head + 1) % k
            if cnt == k:
                acc = 0.0
                for i in range(k):
                    acc += rl[(head + i) % k]
                inc = acc
                has_inc = True
            m, C, n, s = update(m, R, r, s, yt, f, q, RF)
        if has_inc:
            score = alpha * score + inc
            n_inc += 1
            incs[n_new] = inc
            n_new += 1
    return m, C, n, s, score, n_inc, head, cnt, n_new, ell, -1
