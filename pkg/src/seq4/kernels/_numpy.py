"""Pure numpy implementations of the recurrent kernels.

Every function here has a twin in ``_ckernels.pyx`` with an identical
signature.  Gate blocks are packed (input, forget, output, candidate).
"""
import numpy as np

BACKEND = "numpy"


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, H):
    gates = np.empty_like(z)
    gates[:3 * H] = sigmoid(z[:3 * H])
    gates[3 * H:] = np.tanh(z[3 * H:])
    return gates


def lstm_cell_forward(W_in, W_rec, b, x, h, c):
    """One LSTM step.  Returns ``(h_new, c_new, gates, tanh_c)``."""
    H = h.shape[0]
    gates = _activate(W_in @ x + W_rec @ h + b, H)
    c_new = gates[H:2 * H] * c + gates[:H] * gates[3 * H:]
    tc = np.tanh(c_new)
    return gates[2 * H:3 * H] * tc, c_new, gates, tc


def _gate_grad(gates, tc, c_prev, dh, dc, H):
    i, f, o, g = gates[:H], gates[H:2 * H], gates[2 * H:3 * H], gates[3 * H:]
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.empty(4 * H)
    dz[:H] = dc * g * i * (1.0 - i)
    dz[H:2 * H] = dc * c_prev * f * (1.0 - f)
    dz[2 * H:3 * H] = dh * tc * o * (1.0 - o)
    dz[3 * H:] = dc * i * (1.0 - g * g)
    return dz, dc * f


def lstm_cell_backward(W_in, W_rec, x, h, c, gates, tc, dh, dc):
    """Returns ``(dx, dh_prev, dc_prev, dW_in, dW_rec, db)``."""
    H = h.shape[0]
    dz, dc_prev = _gate_grad(gates, tc, c, dh, dc, H)
    return (W_in.T @ dz, W_rec.T @ dz, dc_prev,
            np.outer(dz, x), np.outer(dz, h), dz)


def lstm_seq_forward(W_in, W_rec, b, X, reverse):
    """Run an LSTM over the rows of ``X`` from zero initial state.

    Returns ``(Hs, Cs, G, TC)``; row t of each belongs to input row t
    regardless of direction.
    """
    L = X.shape[0]
    H = W_rec.shape[1]
    Zx = X @ W_in.T + b
    Hs = np.zeros((L, H))
    Cs = np.zeros((L, H))
    G = np.zeros((L, 4 * H))
    TC = np.zeros((L, H))
    h = np.zeros(H)
    c = np.zeros(H)
    order = range(L - 1, -1, -1) if reverse else range(L)
    for t in order:
        g = _activate(Zx[t] + W_rec @ h, H)
        c = g[H:2 * H] * c + g[:H] * g[3 * H:]
        tc = np.tanh(c)
        h = g[2 * H:3 * H] * tc
        Hs[t], Cs[t], G[t], TC[t] = h, c, g, tc
    return Hs, Cs, G, TC


def lstm_seq_backward(W_in, W_rec, X, Hs, Cs, G, TC, dHs, reverse):
    """Backprop through :func:`lstm_seq_forward`.

    Returns ``(dX, dW_in, dW_rec, db)``.
    """
    L = X.shape[0]
    H = W_rec.shape[1]
    dZ = np.zeros((L, 4 * H))
    Hprev = np.zeros((L, H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    order = range(L) if reverse else range(L - 1, -1, -1)
    for t in order:
        p = t + 1 if reverse else t - 1
        if 0 <= p < L:
            c_prev = Cs[p]
            Hprev[t] = Hs[p]
        else:
            c_prev = np.zeros(H)
        dz, dc_next = _gate_grad(G[t], TC[t], c_prev, dHs[t] + dh_next, dc_next, H)
        dZ[t] = dz
        dh_next = W_rec.T @ dz
    return dZ @ W_in, dZ.T @ X, dZ.T @ Hprev, dZ.sum(axis=0)


def attention_forward(W_q, keys_proj, v, keys, q):
    """Additive attention.  Returns ``(context, weights, tanh_pre)``."""
    t = np.tanh(keys_proj + W_q @ q)
    s = t @ v
    s = s - s.max()
    w = np.exp(s)
    w /= w.sum()
    return w @ keys, w, t


def attention_backward(W_q, v, keys, q, w, t, dctx):
    """Returns ``(dq, dW_q, dkeys_proj, dv, dkeys)``."""
    dw = keys @ dctx
    ds = w * (dw - w @ dw)
    dpre = np.outer(ds, v) * (1.0 - t * t)
    dqp = dpre.sum(axis=0)
    return W_q.T @ dqp, np.outer(dqp, q), dpre, t.T @ ds, np.outer(w, dctx)
