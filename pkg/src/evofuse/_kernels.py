"""Compiled per-sample loops for training and test-mode inference.

These mirror ``BaseLearner._step`` and ``infer_sequence`` operation for
operation; the numpy versions stay as readable references and the tests
check that both agree.  Rule arrays are kept with spare capacity so growing
a rule rarely reallocates.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# slots of the packed network-significance state
MEAN_BIAS, STD_BIAS, MEAN_VAR, STD_VAR = 0, 1, 2, 3
MIN_MEAN_BIAS, MIN_STD_BIAS, MIN_MEAN_VAR, MIN_STD_VAR = 4, 5, 6, 7
COUNT, M2_BIAS, M2_VAR, SINCE_RESET = 8, 9, 10, 11
NS_SLOTS = 12

NONE, GROW, PRUNE = 0, 1, 2


@njit(cache=True)
def _adaptive_k(v):
    return 1.25 * math.exp(-v * v) + 0.75


@njit(cache=True)
def _reset_minima(ns, count):
    ns[MIN_MEAN_BIAS] = ns[MEAN_BIAS]
    ns[MIN_STD_BIAS] = ns[STD_BIAS]
    ns[MIN_MEAN_VAR] = ns[MEAN_VAR]
    ns[MIN_STD_VAR] = ns[STD_VAR]
    if count:
        ns[SINCE_RESET] = 0.0


@njit(cache=True)
def ns_step_packed(ns, bias, var, warmup):
    ns[COUNT] += 1.0
    n = ns[COUNT]
    d = bias - ns[MEAN_BIAS]
    ns[MEAN_BIAS] += d / n
    ns[M2_BIAS] += d * (bias - ns[MEAN_BIAS])
    d = var - ns[MEAN_VAR]
    ns[MEAN_VAR] += d / n
    ns[M2_VAR] += d * (var - ns[MEAN_VAR])
    ns[STD_BIAS] = math.sqrt(max(ns[M2_BIAS] / n, 0.0))
    ns[STD_VAR] = math.sqrt(max(ns[M2_VAR] / n, 0.0))
    ns[SINCE_RESET] += 1.0
    if ns[SINCE_RESET] <= warmup:
        _reset_minima(ns, False)
        return NONE
    ns[MIN_MEAN_BIAS] = min(ns[MIN_MEAN_BIAS], ns[MEAN_BIAS])
    ns[MIN_STD_BIAS] = min(ns[MIN_STD_BIAS], ns[STD_BIAS])
    ns[MIN_MEAN_VAR] = min(ns[MIN_MEAN_VAR], ns[MEAN_VAR])
    ns[MIN_STD_VAR] = min(ns[MIN_STD_VAR], ns[STD_VAR])
    if ns[MEAN_BIAS] + ns[STD_BIAS] > ns[MIN_MEAN_BIAS] + _adaptive_k(bias) * ns[MIN_STD_BIAS]:
        _reset_minima(ns, True)
        return GROW
    if ns[MEAN_VAR] + ns[STD_VAR] > ns[MIN_MEAN_VAR] + 2.0 * _adaptive_k(var) * ns[MIN_STD_VAR]:
        _reset_minima(ns, True)
        return PRUNE
    return NONE


@njit(cache=True)
def _grow_capacity(W, omega, anchor, support, birth, firing_sum, R):
    cap = max(2 * W.shape[0], 4)
    n1, O = W.shape[1], W.shape[2]
    W2 = np.empty((cap, n1, O))
    om2 = np.empty((cap, n1, n1))
    an2 = np.empty((cap, n1, O))
    su2 = np.empty(cap)
    bi2 = np.empty(cap, dtype=np.int64)
    fs2 = np.empty(cap)
    W2[:R] = W[:R]
    om2[:R] = omega[:R]
    an2[:R] = anchor[:R]
    su2[:R] = support[:R]
    bi2[:R] = birth[:R]
    fs2[:R] = firing_sum[:R]
    return W2, om2, an2, su2, bi2, fs2


@njit(cache=True)
def train_loop(X, Y, pseudo, W, omega, anchor, support, birth, firing_sum, R,
               ns, mu, F, f, t, gamma, k3, omega_init, alpha, min_rules, warmup):
    """Sequential training pass; returns the (possibly reallocated) state.

    ``pseudo[i]`` selects the anchored update for sample ``i``.  Positions
    alternate between the label (even) and the clipped previous output (odd)
    as the target signal.
    """
    N, u = X.shape
    n1 = u + 1
    O = Y.shape[1]
    grown = 0
    pruned = 0
    x_e = np.empty(n1)
    mu_e = np.empty(n1)
    signal = np.empty(O)
    prev = np.full(O, 1.0 / O)
    y_hat = np.empty(O)
    cap = W.shape[0]
    raw = np.empty((cap + 1, O))
    h = np.empty((cap + 1, O))
    act = np.empty(cap + 1)
    contrib = np.empty((cap + 1, O))
    ox = np.empty(n1)
    K = np.empty(n1)
    tmp = np.empty((n1, O))

    for pos in range(N):
        y = Y[pos]
        x_e[0] = 1.0
        for j in range(u):
            x_e[j + 1] = X[pos, j]
        if pos % 2 == 0:
            for o in range(O):
                signal[o] = y[o]
        else:
            for o in range(O):
                signal[o] = min(max(prev[o], 0.0), 1.0)

        t += 1
        F = F + f
        g = f / F
        mu_e[0] = 1.0
        for j in range(u):
            mu[j] = mu[j] + g * (X[pos, j] - mu[j])
            mu_e[j + 1] = mu[j]

        if raw.shape[0] < R + 1:
            raw = np.empty((2 * R + 1, O))
            h = np.empty((2 * R + 1, O))
            act = np.empty(2 * R + 1)
            contrib = np.empty((2 * R + 1, O))

        # inference with the current rule base
        for r in range(R):
            for o in range(O):
                s = 0.0
                q = 0.0
                c = 0.0
                for j in range(n1):
                    w = W[r, j, o]
                    s += x_e[j] * w
                    q += w * w
                    c += mu_e[j] * w
                raw[r, o] = s
                h[r, o] = abs(signal[o] - s) / math.sqrt(1.0 + q)
                contrib[r, o] = c
        for o in range(O):
            dmax = 0.0
            for r in range(R):
                if h[r, o] > dmax:
                    dmax = h[r, o]
            safe = dmax if dmax > 0.0 else 1.0
            hs = 0.0
            for r in range(R):
                h[r, o] = math.exp(-gamma * h[r, o] / safe)
                hs += h[r, o]
            acc = 0.0
            for r in range(R):
                acc += (h[r, o] / hs) * raw[r, o]
            y_hat[o] = acc
        winner = 0
        for r in range(R):
            s = 0.0
            for o in range(O):
                s += h[r, o]
            act[r] = s / O
            if act[r] > act[winner]:
                winner = r

        # network significance on the rule contributions at the input mean
        bias = 0.0
        m2 = 0.0
        for o in range(O):
            s = 0.0
            q = 0.0
            for r in range(R):
                s += contrib[r, o]
                q += contrib[r, o] * contrib[r, o]
            mean = s / R
            bias += (y[o] - mean) ** 2
            m2 += q / R - mean * mean
        var = max(m2, 0.0)
        action = ns_step_packed(ns, bias, var, warmup)

        if action == GROW:
            if R == W.shape[0]:
                W, omega, anchor, support, birth, firing_sum = _grow_capacity(
                    W, omega, anchor, support, birth, firing_sum, R)
            for j in range(n1):
                for o in range(O):
                    W[R, j, o] = k3
                    anchor[R, j, o] = k3
                for k in range(n1):
                    omega[R, j, k] = omega_init if j == k else 0.0
            support[R] = 1.0
            birth[R] = t
            firing_sum[R] = 0.0
            for o in range(O):
                s = 0.0
                for j in range(n1):
                    s += x_e[j] * k3
                raw[R, o] = s
            act[R] = 1.0
            R += 1
            grown += 1
        else:
            if action == PRUNE and R > min_rules:
                victim = 0
                best = 0.0
                for r in range(R):
                    s = 0.0
                    for o in range(O):
                        s += contrib[r, o]
                    if r == 0 or s < best:
                        best = s
                        victim = r
                transfer = support[victim]
                for r in range(victim, R - 1):
                    W[r] = W[r + 1]
                    omega[r] = omega[r + 1]
                    anchor[r] = anchor[r + 1]
                    support[r] = support[r + 1]
                    birth[r] = birth[r + 1]
                    firing_sum[r] = firing_sum[r + 1]
                    act[r] = act[r + 1]
                    raw[r] = raw[r + 1]
                R -= 1
                winner = 0
                for r in range(R):
                    if act[r] > act[winner]:
                        winner = r
                support[winner] += transfer
                pruned += 1
            support[winner] += 1.0

        # fuzzily weighted RLS on every rule
        asum = 0.0
        for r in range(R):
            asum += act[r]
        for r in range(R):
            lam = act[r] / asum
            firing_sum[r] += act[r]
            q = 0.0
            for j in range(n1):
                s = 0.0
                for k in range(n1):
                    s += omega[r, j, k] * x_e[k]
                ox[j] = s
                q += s * x_e[j]
            scale = lam / (1.0 + lam * q)
            for j in range(n1):
                K[j] = ox[j] * scale
            for j in range(n1):
                for k in range(n1):
                    omega[r, j, k] -= K[j] * ox[k]
            for j in range(n1):
                for k in range(j + 1, n1):
                    a = 0.5 * (omega[r, j, k] + omega[r, k, j])
                    omega[r, j, k] = a
                    omega[r, k, j] = a
            is_pseudo = pseudo[pos]
            coef = alpha
            if is_pseudo:
                coef = alpha * firing_sum[r] / max(t - birth[r], 1)
            for j in range(n1):
                for o in range(O):
                    s = 0.0
                    for k in range(n1):
                        d = W[r, k, o] - anchor[r, k, o] if is_pseudo else W[r, k, o]
                        s += omega[r, j, k] * d
                    tmp[j, o] = s
            for j in range(n1):
                for o in range(O):
                    W[r, j, o] = W[r, j, o] - coef * tmp[j, o] + K[j] * (y[o] - raw[r, o])
            if not is_pseudo:
                for j in range(n1):
                    for o in range(O):
                        anchor[r, j, o] = W[r, j, o]
        for o in range(O):
            prev[o] = y_hat[o]

    return W, omega, anchor, support, birth, firing_sum, R, F, t, grown, pruned


@njit(cache=True)
def infer_loop(XE, W, gamma, signal0):
    """Test-mode outputs and maximum rule activation for consecutive samples."""
    N, n1 = XE.shape
    R, O = W.shape[0], W.shape[2]
    out = np.empty((N, O))
    max_fire = np.empty(N)
    norms = np.empty((R, O))
    for r in range(R):
        for o in range(O):
            q = 0.0
            for j in range(n1):
                q += W[r, j, o] * W[r, j, o]
            norms[r, o] = math.sqrt(1.0 + q)
    raw = np.empty((R, O))
    h = np.empty((R, O))
    signal = signal0.copy()
    for t in range(N):
        for r in range(R):
            for o in range(O):
                s = 0.0
                for j in range(n1):
                    s += XE[t, j] * W[r, j, o]
                raw[r, o] = s
                h[r, o] = abs(signal[o] - s) / norms[r, o]
        for o in range(O):
            dmax = 0.0
            for r in range(R):
                if h[r, o] > dmax:
                    dmax = h[r, o]
            safe = dmax if dmax > 0.0 else 1.0
            hs = 0.0
            for r in range(R):
                h[r, o] = math.exp(-gamma * h[r, o] / safe)
                hs += h[r, o]
            acc = 0.0
            for r in range(R):
                acc += (h[r, o] / hs) * raw[r, o]
            out[t, o] = acc
        best = 0.0
        for r in range(R):
            s = 0.0
            for o in range(O):
                s += h[r, o]
            if r == 0 or s / O > best:
                best = s / O
        max_fire[t] = best
        for o in range(O):
            signal[o] = min(max(out[t, o], 0.0), 1.0)
    return out, max_fire
