"""Compiled kernel implementations (numba @njit).

Loop bodies mirror the numpy backend element for element: the Bellman sweep
agrees to float round-off, the simulator bit-for-bit (same counter-based
streams, same per-element arithmetic order).
"""
from __future__ import annotations

import numpy as np
from numba import njit

from . import SweepTables, POLICY_MYOPIC, POLICY_ALL_ON, \
    POLICY_BEST_SINGLE, POLICY_NONE, POLICY_UNIFORM
from . import rng

_PHI = np.uint64(rng.PHI)
_PHI2 = np.uint64(rng.PHI2)
_M1 = np.uint64(rng._M1)
_M2 = np.uint64(rng._M2)
_U1 = np.uint64(1)
_U11 = np.uint64(11)
_U27 = np.uint64(27)
_U30 = np.uint64(30)
_U31 = np.uint64(31)
_SCALE = rng.U01_SCALE


@njit(cache=True)
def _mix64(x):
    x = x + _PHI
    x = x ^ (x >> _U30)
    x = x * _M1
    x = x ^ (x >> _U27)
    x = x * _M2
    x = x ^ (x >> _U31)
    return x


@njit(cache=True)
def _episode_key(seed, episode):
    return _mix64(seed + _mix64(episode + _U1))


@njit(cache=True)
def _draw_u01(key, counter):
    z = _mix64(key ^ ((counter + _U1) * _PHI2))
    return np.float64(z >> _U11) * _SCALE


def episode_key(seed: int, episode: int) -> int:
    return int(_episode_key(np.uint64(seed & rng.MASK64), np.uint64(episode)))


def draw_u01(key: int, counter: int) -> float:
    return float(_draw_u01(np.uint64(key), np.uint64(counter)))


@njit(cache=True)
def _action_values_flat(values, digits, strides, ax, lo, frac, i0, i1,
                        masks, kcard, gain, offset, beta, out):
    S = values.shape[0]
    A = masks.shape[0]
    n = digits.shape[1]
    corners = 1 << n
    for s in range(S):
        for a in range(A):
            acc = 0.0
            for c in range(corners):
                w = 1.0
                idx = 0
                for j in range(n):
                    d = digits[s, j]
                    if masks[a, j]:
                        if (c >> j) & 1:
                            w *= ax[d]
                            idx += strides[j] * i1
                        else:
                            w *= 1.0 - ax[d]
                            idx += strides[j] * i0
                    else:
                        if (c >> j) & 1:
                            w *= frac[d]
                            idx += strides[j] * (lo[d] + 1)
                        else:
                            w *= 1.0 - frac[d]
                            idx += strides[j] * lo[d]
                acc += w * values[idx]
            if kcard[a] > 0:
                s_used = 0.0
                for j in range(n):
                    if masks[a, j]:
                        s_used += ax[digits[s, j]]
                out[a, s] = (gain[a] * s_used - offset[a]) + beta * acc
            else:
                out[a, s] = beta * acc
    return out


def action_values(values: np.ndarray, t: SweepTables, beta: float) -> np.ndarray:
    A = t.masks.shape[0]
    out = np.empty((A, values.size), dtype=np.float64)
    _action_values_flat(values.ravel(), t.digits, t.strides,
                        t.ax, t.lo, t.frac, np.int64(t.i0), np.int64(t.i1),
                        t.masks, t.kcard, t.gain, t.offset,
                        np.float64(beta), out)
    return out.reshape((A,) + values.shape)


@njit(cache=True)
def _simulate(E, horizon, n, lam0, lam1, sigma, beta, masks, kcard, gain,
              offset, rew_good, pen_bad, priority, policy_kind, ax, table,
              p0, seed):
    A = masks.shape[0]
    G = ax.shape[0]
    lam_lo = min(lam0, lam1)
    lam_hi = max(lam0, lam1)
    dper = n + 1
    single = np.empty(n, np.int64)
    for j in range(n):
        single[j] = 1 << (n - 1 - j)
    out = np.empty(E, np.float64)
    b = np.empty(n, np.float64)
    st = np.empty(n, np.bool_)
    for e in range(E):
        key = _episode_key(seed, np.uint64(e))
        for j in range(n):
            b[j] = p0[j]
            u = _draw_u01(key, np.uint64(j))
            st[j] = u < b[j]
        acc = 0.0
        disc = 1.0
        for t in range(horizon):
            if policy_kind == POLICY_NONE:
                aidx = 0
            elif policy_kind == POLICY_ALL_ON:
                aidx = A - 1
            elif policy_kind == POLICY_BEST_SINGLE:
                jm = 0
                bm = b[0]
                for j in range(1, n):
                    if b[j] > bm:
                        bm = b[j]
                        jm = j
                aidx = single[jm]
            elif policy_kind == POLICY_UNIFORM:
                u = _draw_u01(key, np.uint64(n + t * dper + n))
                ai = np.int64(u * A)
                if ai > A - 1:
                    ai = A - 1
                aidx = ai
            elif policy_kind == POLICY_MYOPIC:
                best = -np.inf
                aidx = 0
                for pi in range(A):
                    a = priority[pi]
                    if kcard[a] == 0:
                        q = 0.0
                    else:
                        s_used = 0.0
                        for j in range(n):
                            if masks[a, j]:
                                s_used = s_used + b[j]
                        q = gain[a] * s_used - offset[a]
                    if q > best:
                        best = q
                        aidx = a
            else:  # POLICY_GRID: nearest axis index per coordinate, ties low
                flat = 0
                for j in range(n):
                    x = b[j]
                    lo_ = 0
                    hi_ = G
                    while lo_ < hi_:
                        mid = (lo_ + hi_) >> 1
                        if ax[mid] < x:
                            lo_ = mid + 1
                        else:
                            hi_ = mid
                    pos = lo_
                    if pos > G - 1:
                        pos = G - 1
                    low = pos - 1
                    if low < 0:
                        low = 0
                    if (x - ax[low]) <= (ax[pos] - x):
                        idx = low
                    else:
                        idx = pos
                    flat = flat * G + idx
                aidx = table[flat]
            r = 0.0
            for j in range(n):
                if masks[aidx, j]:
                    if st[j]:
                        r = r + rew_good[aidx]
                    else:
                        r = r + (-pen_bad[aidx])
                else:
                    r = r + 0.0
            acc = acc + disc * r
            for j in range(n):
                prop = sigma * b[j] + lam0
                prop = min(max(prop, lam_lo), lam_hi)
                if masks[aidx, j]:
                    if st[j]:
                        b[j] = lam1
                    else:
                        b[j] = lam0
                else:
                    b[j] = prop
            for j in range(n):
                u = _draw_u01(key, np.uint64(n + t * dper + j))
                if st[j]:
                    st[j] = u < lam1
                else:
                    st[j] = u < lam0
            disc = disc * beta
        out[e] = acc
    return out


def simulate_batch(episodes, horizon, n, lam0, lam1, sigma, beta,
                   masks, kcard, gain, offset, rew_good, pen_bad, priority,
                   policy_kind, ax, table, p0, seed):
    return _simulate(np.int64(episodes), np.int64(horizon), np.int64(n),
                     np.float64(lam0), np.float64(lam1), np.float64(sigma),
                     np.float64(beta), masks, kcard, gain, offset,
                     rew_good, pen_bad, priority, np.int64(policy_kind),
                     ax, table, np.asarray(p0, dtype=np.float64),
                     np.uint64(seed & rng.MASK64))
