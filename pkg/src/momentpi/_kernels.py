"""Gillespie direct-method kernels.

Every trajectory owns a row of pre-drawn uniforms ``U[i]`` and a cursor
``pos[i]``. Each attempted event consumes exactly two uniforms (waiting
time, reaction choice), including the attempt that overshoots the stop time
and is discarded (exact by memorylessness). Blocks have even length, so a row
runs dry exactly at the block end and the driver refills it from the
trajectory's own generator. Both backends follow this contract with the same
floating-point operation order and therefore produce identical paths.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import HAVE_NUMBA, njit, prange

REACHED = 0
NEED_UNIFORMS = 1
NEGATIVE_PROPENSITY = 2
EVENT_CAP = 3
RECORD_FULL = 4


@njit(cache=True, nogil=True)
def advance_row(x, t, t_stop, S, W, w0, u, pos, n_events, max_events, a):
    """Advance one trajectory towards ``t_stop``; ``x`` is updated in place.

    Returns ``(status, t, pos, n_events, reaction)``; ``reaction`` names the
    offending channel when the status is ``NEGATIVE_PROPENSITY``.
    """
    N, M = S.shape
    n_u = u.shape[0]
    while True:
        a0 = 0.0
        for k in range(M):
            v = w0[k]
            for i in range(N):
                v += W[k, i] * x[i]
            if v < 0.0:
                return NEGATIVE_PROPENSITY, t, pos, n_events, k
            a[k] = v
            a0 += v
        if a0 <= 0.0:
            return REACHED, t_stop, pos, n_events, -1
        if pos + 2 > n_u:
            return NEED_UNIFORMS, t, pos, n_events, -1
        r1 = u[pos]
        r2 = u[pos + 1]
        pos += 2
        tau = -math.log(1.0 - r1) / a0
        if t + tau > t_stop:
            return REACHED, t_stop, pos, n_events, -1
        if n_events >= max_events:
            return EVENT_CAP, t, pos, n_events, -1
        target = r2 * a0
        acc = 0.0
        j = -1
        for k in range(M):
            acc += a[k]
            if target < acc:
                j = k
                break
        if j < 0:
            # rounding pushed target past the total; take the last live channel
            for k in range(M - 1, -1, -1):
                if a[k] > 0.0:
                    j = k
                    break
        t = t + tau
        for i in range(N):
            x[i] += S[i, j]
        n_events += 1


@njit(cache=True, nogil=True, parallel=True)
def advance_ensemble_nb(X, T, t_stop, S, W, w0, U, pos, n_events, max_events, status, reaction):
    n = X.shape[0]
    M = S.shape[1]
    for r in prange(n):
        if status[r] == REACHED and T[r] >= t_stop:
            continue
        a = np.empty(M)
        st, t, p, ne, k = advance_row(X[r], T[r], t_stop, S, W, w0, U[r], pos[r],
                                      n_events[r], max_events, a)
        status[r] = st
        T[r] = t
        pos[r] = p
        n_events[r] = ne
        reaction[r] = k


@njit(cache=True, nogil=True)
def record_row(x, t, t_stop, S, W, w0, u, pos, n_events, max_events, rec_t, rec_x, n_rec):
    """``advance_row`` that also stores the time and state after every event.

    Returns ``(status, t, pos, n_events, n_rec, reaction)``; ``RECORD_FULL``
    asks the caller for larger buffers.
    """
    N, M = S.shape
    n_u = u.shape[0]
    cap = rec_t.shape[0]
    a = np.empty(M)
    while True:
        a0 = 0.0
        for k in range(M):
            v = w0[k]
            for i in range(N):
                v += W[k, i] * x[i]
            if v < 0.0:
                return NEGATIVE_PROPENSITY, t, pos, n_events, n_rec, k
            a[k] = v
            a0 += v
        if a0 <= 0.0:
            return REACHED, t_stop, pos, n_events, n_rec, -1
        if n_rec >= cap:
            return RECORD_FULL, t, pos, n_events, n_rec, -1
        if pos + 2 > n_u:
            return NEED_UNIFORMS, t, pos, n_events, n_rec, -1
        r1 = u[pos]
        r2 = u[pos + 1]
        pos += 2
        tau = -math.log(1.0 - r1) / a0
        if t + tau > t_stop:
            return REACHED, t_stop, pos, n_events, n_rec, -1
        if n_events >= max_events:
            return EVENT_CAP, t, pos, n_events, n_rec, -1
        target = r2 * a0
        acc = 0.0
        j = -1
        for k in range(M):
            acc += a[k]
            if target < acc:
                j = k
                break
        if j < 0:
            for k in range(M - 1, -1, -1):
                if a[k] > 0.0:
                    j = k
                    break
        t = t + tau
        for i in range(N):
            x[i] += S[i, j]
        n_events += 1
        rec_t[n_rec] = t
        for i in range(N):
            rec_x[n_rec, i] = x[i]
        n_rec += 1


# interpreted twin used by the numpy backend for single recorded paths
record_row_py = record_row.py_func if HAVE_NUMBA else record_row


def advance_ensemble_np(X, T, t_stop, S, W, w0, U, pos, n_events, max_events, status, reaction):
    """Vectorized lockstep counterpart of ``advance_ensemble_nb``.

    All live trajectories attempt one event per sweep. Arithmetic mirrors the
    scalar kernel term by term (sequential sums, no matmul reordering).
    """
    N, M = S.shape
    rows = np.flatnonzero(~((status == REACHED) & (T >= t_stop)))
    while rows.size:
        Xr = X[rows].astype(float)
        a = np.empty((rows.size, M))
        a0 = np.zeros(rows.size)
        for k in range(M):
            v = np.full(rows.size, float(w0[k]))
            for i in range(N):
                v = v + W[k, i] * Xr[:, i]
            a[:, k] = v
            a0 = a0 + v
        done = np.zeros(rows.size, dtype=bool)
        neg = a < 0.0
        bad = neg.any(axis=1)
        if bad.any():
            status[rows[bad]] = NEGATIVE_PROPENSITY
            reaction[rows[bad]] = np.argmax(neg, axis=1)[bad]
            done |= bad
        dead = ~done & (a0 <= 0.0)
        if dead.any():
            status[rows[dead]] = REACHED
            T[rows[dead]] = t_stop
            reaction[rows[dead]] = -1
            done |= dead
        dry = ~done & (pos[rows] + 2 > U.shape[1])
        if dry.any():
            status[rows[dry]] = NEED_UNIFORMS
            reaction[rows[dry]] = -1
            done |= dry
        go = np.flatnonzero(~done)
        r = rows[go]
        p = pos[r]
        r1 = U[r, p]
        r2 = U[r, p + 1]
        pos[r] = p + 2
        a0g = a0[go]
        tau = -np.log(1.0 - r1) / a0g
        fire = ~(T[r] + tau > t_stop)
        over = r[~fire]
        status[over] = REACHED
        T[over] = t_stop
        reaction[over] = -1
        capped = fire & (n_events[r] >= max_events)
        if capped.any():
            status[r[capped]] = EVENT_CAP
            reaction[r[capped]] = -1
            fire &= ~capped
        rf = r[fire]
        if rf.size:
            af = a[go][fire]
            acc = np.zeros(rf.size)
            j = np.full(rf.size, -1)
            target = r2[fire] * a0g[fire]
            for k in range(M):
                acc = acc + af[:, k]
                j[(j < 0) & (target < acc)] = k
            miss = j < 0
            if miss.any():
                live_k = af[miss] > 0.0
                j[miss] = M - 1 - np.argmax(live_k[:, ::-1], axis=1)
            T[rf] = T[rf] + tau[fire]
            X[rf] += S[:, j].T
            n_events[rf] += 1
        rows = rf
