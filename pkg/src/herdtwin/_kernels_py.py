"""Pure numpy implementations of the hot kernels.

Same signatures and array layouts as the compiled ``_kernels`` module; used
when the extension is not built or ``HERDTWIN_PURE_PYTHON=1`` is set.
"""
import numpy as np

N_STATES = 8


def hourly_counts(minutes, states, corrupted):
    """Per clock hour: minutes in each state, record count and a destroyed flag.

    ``minutes`` must be sorted ascending.  ``states`` holds state indices,
    ``-1`` for an unreadable cell.  An hour with any corrupted record is
    flagged destroyed.
    """
    minutes = np.asarray(minutes, dtype=np.int64)
    states = np.asarray(states, dtype=np.int8)
    corrupted = np.asarray(corrupted, dtype=np.uint8)
    if minutes.size == 0:
        return (np.empty(0, np.int64), np.zeros((0, N_STATES), np.int32),
                np.zeros(0, np.int32), np.zeros(0, np.uint8))
    hours_all = minutes // 60
    hours, inverse = np.unique(hours_all, return_inverse=True)
    k = hours.size
    counts = np.zeros((k, N_STATES), np.int32)
    ok = states >= 0
    np.add.at(counts, (inverse[ok], states[ok].astype(np.intp)), 1)
    n_records = np.bincount(inverse, minlength=k).astype(np.int32)
    destroyed = (np.bincount(inverse, weights=corrupted, minlength=k) > 0).astype(np.uint8)
    return hours, counts, n_records, destroyed


def fir_apply(x, taps):
    """Centered convolution with edge replication; output length = input length."""
    x = np.asarray(x, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.float64)
    n, L = x.size, taps.size
    c = (L - 1) // 2
    idx = np.clip(np.arange(n)[:, None] + np.arange(L)[None, :] - c, 0, n - 1)
    return x[idx] @ taps


def gauss_eval_jac(params, x, want_jac=True):
    p = np.asarray(params, dtype=np.float64).reshape(-1, 3)
    x = np.asarray(x, dtype=np.float64)
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    u = (x[:, None] - b[None, :]) / c[None, :]
    e = np.exp(-u * u)
    f = e @ a
    if not want_jac:
        return f, None
    jac = np.empty((x.size, p.shape[0] * 3))
    ae = a[None, :] * e
    jac[:, 0::3] = e
    jac[:, 1::3] = ae * 2.0 * u / c[None, :]
    jac[:, 2::3] = ae * 2.0 * u * u / c[None, :]
    return f, jac


def _sigmoid(z):
    return 0.5 * np.tanh(0.5 * z) + 0.5


def lstm_forward(X, W, U, b):
    """Run one LSTM layer over a time-major batch.

    X: (T, B, D); W: (D, 4H); U: (H, 4H); b: (4H,), gate blocks ordered
    input, forget, candidate, output.  Returns hidden states (T+1, B, H),
    cell states (T+1, B, H), activated gates (T, B, 4H) and tanh(cell)
    (T, B, H); index 0 of the state arrays is the zero initial state.
    """
    T, B, D = X.shape
    H = U.shape[0]
    Hs = np.zeros((T + 1, B, H))
    Cs = np.zeros((T + 1, B, H))
    G = (X.reshape(T * B, D) @ W + b).reshape(T, B, 4 * H)
    TC = np.empty((T, B, H))
    for t in range(T):
        z = G[t]
        z += Hs[t] @ U
        z[:, :H] = _sigmoid(z[:, :H])
        z[:, H:2 * H] = _sigmoid(z[:, H:2 * H])
        z[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        z[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        c = z[:, H:2 * H] * Cs[t] + z[:, :H] * z[:, 2 * H:3 * H]
        Cs[t + 1] = c
        tc = np.tanh(c)
        TC[t] = tc
        Hs[t + 1] = z[:, 3 * H:] * tc
    return Hs, Cs, G, TC


def lstm_backward(X, W, U, Hs, Cs, G, TC, dH):
    """Backpropagation through time for one layer.

    ``dH`` (T, B, H) is the loss gradient arriving at each hidden output from
    above.  Returns (dX, dW, dU, db).
    """
    T, B, D = X.shape
    H = U.shape[0]
    dZ = np.empty((T, B, 4 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = G[t]
        i, f, cand, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = TC[t]
        dh = dH[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dZ[t]
        dz[:, :H] = dc * cand * i * (1.0 - i)
        dz[:, H:2 * H] = dc * Cs[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - cand * cand)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ U.T
        dU += Hs[t].T @ dz
    flat = dZ.reshape(T * B, 4 * H)
    dW = X.reshape(T * B, D).T @ flat
    db = flat.sum(axis=0)
    dX = (flat @ W.T).reshape(T, B, D)
    return dX, dW, dU, db
