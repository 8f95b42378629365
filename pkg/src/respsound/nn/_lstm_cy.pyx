# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM sequence kernels; same contract as _lstm_py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

BACKEND = "cython"


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def lstm_forward(const double[:, ::1] W, const double[::1] b, const double[:, ::1] xs):
    cdef Py_ssize_t T = xs.shape[0]
    cdef Py_ssize_t D = xs.shape[1]
    cdef Py_ssize_t H = W.shape[0] // 4
    cdef Py_ssize_t Z = D + H

    gates_arr = np.empty((T, 4 * H))
    cs_arr = np.empty((T, H))
    ys_arr = np.empty((T, H))
    z_arr = np.zeros(Z)
    c_arr = np.zeros(H)
    cdef double[:, ::1] gates = gates_arr
    cdef double[:, ::1] cs = cs_arr
    cdef double[:, ::1] ys = ys_arr
    cdef double[::1] z = z_arr
    cdef double[::1] c = c_arr

    cdef Py_ssize_t t, r, j, h
    cdef double a, i_h, f_h, o_h, g_h, c_h, y_h

    with nogil:
        for t in range(T):
            for j in range(D):
                z[j] = xs[t, j]
            for r in range(4 * H):
                a = b[r]
                for j in range(Z):
                    a += W[r, j] * z[j]
                if r < 3 * H:
                    gates[t, r] = _sigmoid(a)
                else:
                    gates[t, r] = tanh(a)
            for h in range(H):
                i_h = gates[t, h]
                f_h = gates[t, H + h]
                o_h = gates[t, 2 * H + h]
                g_h = gates[t, 3 * H + h]
                c_h = f_h * c[h] + i_h * g_h
                y_h = o_h * tanh(c_h)
                c[h] = c_h
                cs[t, h] = c_h
                ys[t, h] = y_h
                z[D + h] = y_h
    return gates_arr, cs_arr, ys_arr


def lstm_backward(const double[:, ::1] W, const double[:, ::1] xs,
                  const double[:, ::1] gates, const double[:, ::1] cs,
                  const double[:, ::1] ys, const double[:, ::1] dys):
    cdef Py_ssize_t T = xs.shape[0]
    cdef Py_ssize_t D = xs.shape[1]
    cdef Py_ssize_t H = W.shape[0] // 4
    cdef Py_ssize_t Z = D + H

    dW_arr = np.zeros((4 * H, Z))
    db_arr = np.zeros(4 * H)
    dxs_arr = np.empty((T, D))
    da_arr = np.empty(4 * H)
    dy_rec_arr = np.zeros(H)
    dc_arr = np.zeros(H)
    z_arr = np.empty(Z)
    dz_arr = np.empty(Z)
    cdef double[:, ::1] dW = dW_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dxs = dxs_arr
    cdef double[::1] da = da_arr
    cdef double[::1] dy_rec = dy_rec_arr
    cdef double[::1] dc = dc_arr
    cdef double[::1] z = z_arr
    cdef double[::1] dz = dz_arr

    cdef Py_ssize_t t, r, j, h
    cdef double i_h, f_h, o_h, g_h, tc, dy, c_prev, s

    with nogil:
        for t in range(T - 1, -1, -1):
            for h in range(H):
                i_h = gates[t, h]
                f_h = gates[t, H + h]
                o_h = gates[t, 2 * H + h]
                g_h = gates[t, 3 * H + h]
                c_prev = cs[t - 1, h] if t > 0 else 0.0
                tc = tanh(cs[t, h])
                dy = dys[t, h] + dy_rec[h]
                dc[h] = dc[h] + dy * o_h * (1.0 - tc * tc)
                da[h] = dc[h] * g_h * i_h * (1.0 - i_h)
                da[H + h] = dc[h] * c_prev * f_h * (1.0 - f_h)
                da[2 * H + h] = dy * tc * o_h * (1.0 - o_h)
                da[3 * H + h] = dc[h] * i_h * (1.0 - g_h * g_h)
                dc[h] = dc[h] * f_h
            for j in range(D):
                z[j] = xs[t, j]
            for h in range(H):
                z[D + h] = ys[t - 1, h] if t > 0 else 0.0
            for r in range(4 * H):
                for j in range(Z):
                    dW[r, j] += da[r] * z[j]
                db[r] += da[r]
            for j in range(Z):
                s = 0.0
                for r in range(4 * H):
                    s += W[r, j] * da[r]
                dz[j] = s
            for j in range(D):
                dxs[t, j] = dz[j]
            for h in range(H):
                dy_rec[h] = dz[D + h]
    return dW_arr, db_arr, dxs_arr
