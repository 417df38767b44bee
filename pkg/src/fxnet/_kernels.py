"""Compiled inner loops for the sequential parts of the library.

Everything here is plain numba over numpy arrays; the differentiable
wrappers live in :mod:`fxnet.tensor` and :mod:`fxnet.effects`.
Gate layout for the LSTM kernels is (input, forget, cell, output).
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sigmoid(v):
    return 0.5 * (1.0 + math.tanh(0.5 * v))


@njit(cache=True)
def lstm_forward(xg, w_hh, h0, c0):
    """Run the recurrence given precomputed input projections.

    ``xg`` is ``x @ w_ih.T + b_ih + b_hh`` with shape (T, 4H).
    Returns hidden states, cell states and post-activation gates.
    """
    T = xg.shape[0]
    H = h0.shape[0]
    hs = np.empty((T, H), dtype=xg.dtype)
    cs = np.empty((T, H), dtype=xg.dtype)
    acts = np.empty((T, 4 * H), dtype=xg.dtype)
    h = h0.copy()
    c = c0.copy()
    pre = np.empty(4 * H, dtype=xg.dtype)
    for t in range(T):
        for r in range(4 * H):
            s = xg[t, r]
            for k in range(H):
                s += w_hh[r, k] * h[k]
            pre[r] = s
        for k in range(H):
            i = _sigmoid(pre[k])
            f = _sigmoid(pre[H + k])
            g = math.tanh(pre[2 * H + k])
            o = _sigmoid(pre[3 * H + k])
            acts[t, k] = i
            acts[t, H + k] = f
            acts[t, 2 * H + k] = g
            acts[t, 3 * H + k] = o
            c[k] = f * c[k] + i * g
            h[k] = o * math.tanh(c[k])
            cs[t, k] = c[k]
            hs[t, k] = h[k]
    return hs, cs, acts


@njit(cache=True)
def lstm_backward(gh, gc, acts, cs, c0, w_hh):
    """Backpropagate through time; returns d(pre-activation) of shape (T, 4H)."""
    T, H = gh.shape
    dpre = np.empty((T, 4 * H), dtype=gh.dtype)
    dh_next = np.zeros(H, dtype=gh.dtype)
    dc_next = np.zeros(H, dtype=gh.dtype)
    for t in range(T - 1, -1, -1):
        for k in range(H):
            i = acts[t, k]
            f = acts[t, H + k]
            g = acts[t, 2 * H + k]
            o = acts[t, 3 * H + k]
            c_prev = cs[t - 1, k] if t > 0 else c0[k]
            tc = math.tanh(cs[t, k])
            dh = gh[t, k] + dh_next[k]
            dc = gc[t, k] + dc_next[k] + dh * o * (1.0 - tc * tc)
            dpre[t, k] = dc * g * i * (1.0 - i)
            dpre[t, H + k] = dc * c_prev * f * (1.0 - f)
            dpre[t, 2 * H + k] = dc * i * (1.0 - g * g)
            dpre[t, 3 * H + k] = dh * tc * o * (1.0 - o)
            dc_next[k] = dc * f
        for k in range(H):
            s = 0.0
            for r in range(4 * H):
                s += w_hh[r, k] * dpre[t, r]
            dh_next[k] = s
    return dpre


@njit(cache=True)
def envelope(x, alpha_attack, alpha_release, init):
    """Branching one-pole follower on ``|x|``."""
    out = np.empty(x.shape[0], dtype=np.float64)
    env = init
    for t in range(x.shape[0]):
        v = abs(x[t])
        a = alpha_attack if v > env else alpha_release
        env = a * env + (1.0 - a) * v
        out[t] = env
    return out


@njit(cache=True)
def peak_smoother(x, alpha_attack, alpha_hold):
    """Peak detector (instant rise, one-pole fall) followed by a one-pole smoother."""
    out = np.empty(x.shape[0], dtype=np.float64)
    peak = 0.0
    y = 0.0
    for t in range(x.shape[0]):
        v = x[t]
        peak = max(v, alpha_hold * peak + (1.0 - alpha_hold) * v)
        y = alpha_attack * y + (1.0 - alpha_attack) * peak
        out[t] = y
    return out
