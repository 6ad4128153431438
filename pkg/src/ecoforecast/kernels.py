"""Hot inner loops, each with a numba kernel and a numpy twin.

The public names (``idm_accel``, ``clamp_lanes``, ``css_residuals``,
``nearest_centroid``, ``group_sum``) dispatch on ``_accel.USE_NUMBA``; the
``*_jit`` / ``*_np`` variants stay importable so tests can compare them.
"""

import numpy as np
from scipy.signal import lfilter

from ._accel import USE_NUMBA, njit


# --------------------------------------------------------------------- IDM

@njit
def idm_accel_jit(v, v0, gap, dv, a, b, s0, T, delta, decel_cap):
    n = v.shape[0]
    out = np.empty(n)
    sab = 2.0 * np.sqrt(a * b)
    for i in range(n):
        free = (v[i] / v0[i]) ** delta
        if np.isinf(gap[i]):
            acc = a * (1.0 - free)
        elif gap[i] <= 0.0:
            acc = -decel_cap
        else:
            s_star = s0 + max(0.0, v[i] * T + v[i] * dv[i] / sab)
            acc = a * (1.0 - free - (s_star / gap[i]) ** 2)
        if acc < -decel_cap:
            acc = -decel_cap
        out[i] = acc
    return out


def idm_accel_np(v, v0, gap, dv, a, b, s0, T, delta, decel_cap):
    free = (v / v0) ** delta
    s_star = s0 + np.maximum(0.0, v * T + v * dv / (2.0 * np.sqrt(a * b)))
    with np.errstate(divide="ignore", invalid="ignore"):
        inter = np.where(np.isinf(gap), 0.0, (s_star / gap) ** 2)
    acc = a * (1.0 - free - inter)
    acc = np.where(gap <= 0.0, -decel_cap, acc)
    return np.maximum(acc, -decel_cap)


# ------------------------------------------------------ lane ordering clamp

@njit
def clamp_lanes_jit(order, leader, pos, speed, veh_len):
    # order lists vehicles front-to-back within each lane, so every leader
    # is final before its follower is visited
    for k in range(order.shape[0]):
        i = order[k]
        j = leader[i]
        if j >= 0:
            lim = pos[j] - veh_len
            if pos[i] > lim:
                pos[i] = lim
                if speed[i] > speed[j]:
                    speed[i] = speed[j]
    return pos, speed


def clamp_lanes_np(order, leader, pos, speed, veh_len):
    has = leader >= 0
    idx = np.nonzero(has)[0]
    lead = leader[idx]
    while idx.size:
        lim = pos[lead] - veh_len
        bad = pos[idx] > lim
        if not bad.any():
            break
        pos[idx[bad]] = lim[bad]
        slow = bad & (speed[idx] > speed[lead])
        speed[idx[slow]] = speed[lead[slow]]
    return pos, speed


# --------------------------------------------------- ARIMAX CSS residuals

@njit
def css_residuals_jit(w, X, mu, phi, beta, theta, start):
    n = w.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    r = beta.shape[0]
    e = np.zeros(n)
    for t in range(start, n):
        pred = mu
        for i in range(p):
            pred += phi[i] * w[t - 1 - i]
        for k in range(r):
            pred += beta[k] * X[t, k]
        for j in range(q):
            if t - 1 - j >= start:
                pred += theta[j] * e[t - 1 - j]
        e[t] = w[t] - pred
    return e


def css_residuals_np(w, X, mu, phi, beta, theta, start):
    n = w.shape[0]
    u = w[start:] - mu
    for i in range(phi.shape[0]):
        u = u - phi[i] * w[start - 1 - i:n - 1 - i]
    if beta.shape[0]:
        u = u - X[start:] @ beta
    e = np.zeros(n)
    if theta.shape[0]:
        e[start:] = lfilter([1.0], np.concatenate(([1.0], theta)), u)
    else:
        e[start:] = u
    return e


# ---------------------------------------------------------------- k-means

@njit
def nearest_centroid_jit(X, C):
    n, d = X.shape
    k = C.shape[0]
    lab = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = np.inf
        bj = 0
        for j in range(k):
            s = 0.0
            for m in range(d):
                diff = X[i, m] - C[j, m]
                s += diff * diff
            if s < best:
                best = s
                bj = j
        lab[i] = bj
        dist[i] = best
    return lab, dist


def nearest_centroid_np(X, C):
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    lab = np.argmin(d2, axis=1)
    return lab, d2[np.arange(X.shape[0]), lab]


# ------------------------------------------------------ grouped summation

@njit
def group_sum_jit(groups, values, n_groups):
    out = np.zeros(n_groups)
    for i in range(groups.shape[0]):
        out[groups[i]] += values[i]
    return out


def group_sum_np(groups, values, n_groups):
    return np.bincount(groups, weights=values, minlength=n_groups).astype(float)


if USE_NUMBA:
    idm_accel = idm_accel_jit
    clamp_lanes = clamp_lanes_jit
    css_residuals = css_residuals_jit
    nearest_centroid = nearest_centroid_jit
    group_sum = group_sum_jit
else:
    idm_accel = idm_accel_np
    clamp_lanes = clamp_lanes_np
    css_residuals = css_residuals_np
    nearest_centroid = nearest_centroid_np
    group_sum = group_sum_np
    group_sum = group_sum_np
