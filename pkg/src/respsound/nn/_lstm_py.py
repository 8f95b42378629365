"""Pure-numpy LSTM sequence kernels (fallback when the C extension is absent).

Both backends share one contract:

  lstm_forward(W, b, xs) -> (gates, cs, ys)
    W: (4H, D+H) stacked gate weights, rows ordered [input, forget, output,
       candidate]; each row acts on the concatenation [x_t, y_{t-1}].
    b: (4H,) stacked biases; xs: (T, D).
    gates: (T, 4H) post-activation gate values; cs, ys: (T, H).

  lstm_backward(W, xs, gates, cs, ys, dys) -> (dW, db, dxs)
    dys: (T, H) loss gradient arriving at each step's hidden output from
    outside the recurrence. Returns gradients w.r.t. W, b and the inputs.
"""
from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_forward(W, b, xs):
    T, D = xs.shape
    H = W.shape[0] // 4
    gates = np.empty((T, 4 * H))
    cs = np.empty((T, H))
    ys = np.empty((T, H))
    z = np.zeros(D + H)
    c = np.zeros(H)
    for t in range(T):
        z[:D] = xs[t]
        a = W @ z + b
        i = sigmoid(a[:H])
        f = sigmoid(a[H:2 * H])
        o = sigmoid(a[2 * H:3 * H])
        g = np.tanh(a[3 * H:])
        c = f * c + i * g
        y = o * np.tanh(c)
        gates[t, :H], gates[t, H:2 * H] = i, f
        gates[t, 2 * H:3 * H], gates[t, 3 * H:] = o, g
        cs[t] = c
        ys[t] = y
        z[D:] = y
    return gates, cs, ys


def lstm_backward(W, xs, gates, cs, ys, dys):
    T, D = xs.shape
    H = W.shape[0] // 4
    dW = np.zeros_like(W)
    db = np.zeros(4 * H)
    dxs = np.empty((T, D))
    da = np.empty(4 * H)
    dy_rec = np.zeros(H)
    dc = np.zeros(H)
    z = np.empty(D + H)
    for t in range(T - 1, -1, -1):
        i, f = gates[t, :H], gates[t, H:2 * H]
        o, g = gates[t, 2 * H:3 * H], gates[t, 3 * H:]
        c_prev = cs[t - 1] if t > 0 else np.zeros(H)
        tc = np.tanh(cs[t])
        dy = dys[t] + dy_rec
        dc = dc + dy * o * (1.0 - tc * tc)
        da[:H] = dc * g * i * (1.0 - i)
        da[H:2 * H] = dc * c_prev * f * (1.0 - f)
        da[2 * H:3 * H] = dy * tc * o * (1.0 - o)
        da[3 * H:] = dc * i * (1.0 - g * g)
        z[:D] = xs[t]
        z[D:] = ys[t - 1] if t > 0 else 0.0
        dW += np.outer(da, z)
        db += da
        dz = W.T @ da
        dxs[t] = dz[:D]
        dy_rec = dz[D:]
        dc = dc * f
    return dW, db, dxs
