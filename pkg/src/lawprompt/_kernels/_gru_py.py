"""Pure numpy GRU recurrence, used when the compiled kernel is unavailable.

Weights act on the concatenation ``[x; h]`` (or ``[x; r*h]`` for the
candidate), shape ``(d_g, d_in + d_g)``.
"""
import numpy as np


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def gru_forward(X, wz, wr, wh, bz, br, bh, h0):
    T, d_in = X.shape
    d_g = h0.shape[0]
    H = np.empty((T + 1, d_g))
    Z = np.empty((T, d_g))
    R = np.empty((T, d_g))
    C = np.empty((T, d_g))
    H[0] = h0
    wz_x, wz_h = wz[:, :d_in], wz[:, d_in:]
    wr_x, wr_h = wr[:, :d_in], wr[:, d_in:]
    wh_x, wh_h = wh[:, :d_in], wh[:, d_in:]
    # input contributions do not depend on the recurrence
    az_in = X @ wz_x.T + bz
    ar_in = X @ wr_x.T + br
    ah_in = X @ wh_x.T + bh
    for t in range(T):
        h = H[t]
        z = _sigmoid(az_in[t] + wz_h @ h)
        r = _sigmoid(ar_in[t] + wr_h @ h)
        c = np.tanh(ah_in[t] + wh_h @ (r * h))
        Z[t], R[t], C[t] = z, r, c
        H[t + 1] = (1.0 - z) * h + z * c
    return H, Z, R, C


def gru_backward(X, wz, wr, wh, H, Z, R, C, dH):
    """Backpropagate ``dH`` (gradients w.r.t. ``H[1:]``) through time.

    Returns ``(dX, dwz, dwr, dwh, dbz, dbr, dbh, dh0)``.
    """
    T, d_in = X.shape
    d_g = H.shape[1]
    dX = np.zeros_like(X)
    dwz = np.zeros_like(wz)
    dwr = np.zeros_like(wr)
    dwh = np.zeros_like(wh)
    dbz = np.zeros(d_g)
    dbr = np.zeros(d_g)
    dbh = np.zeros(d_g)
    dh = np.zeros(d_g)
    for t in range(T - 1, -1, -1):
        dh = dh + dH[t]
        h_prev, z, r, c = H[t], Z[t], R[t], C[t]
        dc = dh * z
        dz = dh * (c - h_prev)
        dh_prev = dh * (1.0 - z)

        da_h = dc * (1.0 - c * c)
        rh = r * h_prev
        dwh[:, :d_in] += np.outer(da_h, X[t])
        dwh[:, d_in:] += np.outer(da_h, rh)
        dbh += da_h
        d_cat = wh.T @ da_h
        dX[t] += d_cat[:d_in]
        d_rh = d_cat[d_in:]
        dr = d_rh * h_prev
        dh_prev += d_rh * r

        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        dwz[:, :d_in] += np.outer(da_z, X[t])
        dwz[:, d_in:] += np.outer(da_z, h_prev)
        dwr[:, :d_in] += np.outer(da_r, X[t])
        dwr[:, d_in:] += np.outer(da_r, h_prev)
        dbz += da_z
        dbr += da_r
        d_cat = wz.T @ da_z + wr.T @ da_r
        dX[t] += d_cat[:d_in]
        dh_prev += d_cat[d_in:]
        dh = dh_prev
    return dX, dwz, dwr, dwh, dbz, dbr, dbh, dh
