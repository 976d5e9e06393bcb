# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU recurrence. Mirrors ``_gru_py`` exactly; see that module."""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


cdef inline double _sigmoid(double a) noexcept nogil:
    return 0.5 * (1.0 + tanh(0.5 * a))


def gru_forward(double[:, ::1] X, double[:, ::1] wz, double[:, ::1] wr,
                double[:, ::1] wh, double[::1] bz, double[::1] br,
                double[::1] bh, double[::1] h0):
    cdef Py_ssize_t T = X.shape[0], d_in = X.shape[1], d_g = h0.shape[0]
    cdef Py_ssize_t t, i, j
    cdef double az, ar, ah, acc
    H_arr = np.empty((T + 1, d_g))
    Z_arr = np.empty((T, d_g))
    R_arr = np.empty((T, d_g))
    C_arr = np.empty((T, d_g))
    rh_arr = np.empty(d_g)
    cdef double[:, ::1] H = H_arr
    cdef double[:, ::1] Z = Z_arr
    cdef double[:, ::1] R = R_arr
    cdef double[:, ::1] C = C_arr
    cdef double[::1] rh = rh_arr
    with nogil:
        for i in range(d_g):
            H[0, i] = h0[i]
        for t in range(T):
            for i in range(d_g):
                az = bz[i]
                ar = br[i]
                for j in range(d_in):
                    az = az + wz[i, j] * X[t, j]
                    ar = ar + wr[i, j] * X[t, j]
                for j in range(d_g):
                    az = az + wz[i, d_in + j] * H[t, j]
                    ar = ar + wr[i, d_in + j] * H[t, j]
                Z[t, i] = _sigmoid(az)
                R[t, i] = _sigmoid(ar)
            for j in range(d_g):
                rh[j] = R[t, j] * H[t, j]
            for i in range(d_g):
                ah = bh[i]
                for j in range(d_in):
                    ah = ah + wh[i, j] * X[t, j]
                for j in range(d_g):
                    ah = ah + wh[i, d_in + j] * rh[j]
                C[t, i] = tanh(ah)
            for i in range(d_g):
                H[t + 1, i] = (1.0 - Z[t, i]) * H[t, i] + Z[t, i] * C[t, i]
    return H_arr, Z_arr, R_arr, C_arr


def gru_backward(double[:, ::1] X, double[:, ::1] wz, double[:, ::1] wr,
                 double[:, ::1] wh, double[:, ::1] H, double[:, ::1] Z,
                 double[:, ::1] R, double[:, ::1] C, double[:, ::1] dH):
    cdef Py_ssize_t T = X.shape[0], d_in = X.shape[1], d_g = H.shape[1]
    cdef Py_ssize_t t, i, j, k = d_in + d_g
    cdef double z, r, c, hp, g
    dX_arr = np.zeros((T, d_in))
    dwz_arr = np.zeros((d_g, k))
    dwr_arr = np.zeros((d_g, k))
    dwh_arr = np.zeros((d_g, k))
    dbz_arr = np.zeros(d_g)
    dbr_arr = np.zeros(d_g)
    dbh_arr = np.zeros(d_g)
    dh_arr = np.zeros(d_g)
    cdef double[:, ::1] dX = dX_arr
    cdef double[:, ::1] dwz = dwz_arr
    cdef double[:, ::1] dwr = dwr_arr
    cdef double[:, ::1] dwh = dwh_arr
    cdef double[::1] dbz = dbz_arr
    cdef double[::1] dbr = dbr_arr
    cdef double[::1] dbh = dbh_arr
    cdef double[::1] dh = dh_arr
    cdef double[::1] dh_prev = np.zeros(d_g)
    cdef double[::1] da_h = np.zeros(d_g)
    cdef double[::1] da_z = np.zeros(d_g)
    cdef double[::1] da_r = np.zeros(d_g)
    cdef double[::1] d_rh = np.zeros(d_g)
    with nogil:
        for t in range(T - 1, -1, -1):
            for i in range(d_g):
                dh[i] = dh[i] + dH[t, i]
                z = Z[t, i]
                c = C[t, i]
                hp = H[t, i]
                dh_prev[i] = dh[i] * (1.0 - z)
                da_h[i] = dh[i] * z * (1.0 - c * c)
                # update-gate pre-activation gradient
                da_z[i] = dh[i] * (c - hp) * z * (1.0 - z)
            # candidate weights act on [x; r*h]
            for i in range(d_g):
                g = da_h[i]
                dbh[i] = dbh[i] + g
                for j in range(d_in):
                    dwh[i, j] = dwh[i, j] + g * X[t, j]
                for j in range(d_g):
                    dwh[i, d_in + j] = dwh[i, d_in + j] + g * R[t, j] * H[t, j]
            for j in range(d_in):
                g = 0.0
                for i in range(d_g):
                    g = g + wh[i, j] * da_h[i]
                dX[t, j] = dX[t, j] + g
            for j in range(d_g):
                g = 0.0
                for i in range(d_g):
                    g = g + wh[i, d_in + j] * da_h[i]
                d_rh[j] = g
                r = R[t, j]
                dh_prev[j] = dh_prev[j] + g * r
                da_r[j] = g * H[t, j] * r * (1.0 - r)
            for i in range(d_g):
                dbz[i] = dbz[i] + da_z[i]
                dbr[i] = dbr[i] + da_r[i]
                for j in range(d_in):
                    dwz[i, j] = dwz[i, j] + da_z[i] * X[t, j]
                    dwr[i, j] = dwr[i, j] + da_r[i] * X[t, j]
                for j in range(d_g):
                    dwz[i, d_in + j] = dwz[i, d_in + j] + da_z[i] * H[t, j]
                    dwr[i, d_in + j] = dwr[i, d_in + j] + da_r[i] * H[t, j]
            for j in range(d_in):
                g = 0.0
                for i in range(d_g):
                    g = g + wz[i, j] * da_z[i] + wr[i, j] * da_r[i]
                dX[t, j] = dX[t, j] + g
            for j in range(d_g):
                g = 0.0
                for i in range(d_g):
                    g = g + wz[i, d_in + j] * da_z[i] + wr[i, d_in + j] * da_r[i]
                dh[j] = dh_prev[j] + g
    return dX_arr, dwz_arr, dwr_arr, dwh_arr, dbz_arr, dbr_arr, dbh_arr, dh_arr
