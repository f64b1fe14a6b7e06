"""Reference numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` function for function and are used whenever
the compiled module is missing or ``FSLLOAD_PURE_PYTHON`` is set.
"""
import numpy as np


def sampen_counts(x, m, r):
    """Unordered template pairs (i < j) with Chebyshev distance < r.

    Both counts use the same N - m template start positions, so the
    length-(m+1) count never exceeds the length-m count.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    n_templates = x.size - m
    if n_templates < 2:
        return 0, 0
    emb = np.lib.stride_tricks.sliding_window_view(x, m + 1)[:n_templates]
    diff = np.abs(emb[:, None, :] - emb[None, :, :])
    dist_m = diff[:, :, :m].max(axis=2)
    dist_m1 = np.maximum(dist_m, diff[:, :, m])
    iu = np.triu_indices(n_templates, 1)
    return int(np.count_nonzero(dist_m[iu] < r)), int(np.count_nonzero(dist_m1[iu] < r))


def average_linkage(dist, k):
    """Average-linkage agglomeration on a precomputed distance matrix.

    Returns, per sample, the smallest sample index in its cluster once ``k``
    clusters remain.  Ties go to the lexicographically smallest slot pair.
    """
    d = np.array(dist, dtype=np.float64)
    n = d.shape[0]
    sizes = np.ones(n)
    owner = np.arange(n)
    active = np.ones(n, dtype=bool)
    work = d.copy()
    work[np.tril_indices(n)] = np.inf
    for _ in range(n - k):
        flat = int(np.argmin(work))
        a, b = divmod(flat, n)
        na, nb = sizes[a], sizes[b]
        merged = (na * d[a] + nb * d[b]) / (na + nb)
        d[a, :] = merged
        d[:, a] = merged
        d[a, a] = 0.0
        sizes[a] = na + nb
        active[b] = False
        owner[owner == b] = a
        work[b, :] = np.inf
        work[:, b] = np.inf
        rows = np.flatnonzero(active)
        lo = rows[rows < a]
        hi = rows[rows > a]
        work[lo, a] = merged[lo]
        work[a, hi] = merged[hi]
    return owner


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_forward(wx, wh, b, wy, by, X, keep_cache=False):
    X = np.asarray(X, dtype=np.float64)
    B, T = X.shape
    H = wy.size
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        z = X[:, t, None] * wx + h @ wh.T + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep_cache:
            cache.append((h_prev, c_prev, i, f, g, o, tc))
    pred = h @ wy + by
    return pred, h, cache


def lstm_predict(wx, wh, b, wy, by, X):
    return lstm_forward(wx, wh, b, wy, by, X)[0]


def lstm_loss_grad(wx, wh, b, wy, by, X, y):
    """Mean squared error of a batch and its gradient via backprop through time."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    B, T = X.shape
    H = wy.size
    pred, h_last, cache = lstm_forward(wx, wh, b, wy, by, X, keep_cache=True)
    err = pred - y
    loss = float(np.mean(err * err))
    dpred = 2.0 * err / B
    dwy = h_last.T @ dpred
    dby = float(dpred.sum())
    dh = dpred[:, None] * wy[None, :]
    dc = np.zeros((B, H))
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros_like(b)
    dz = np.empty((B, 4 * H))
    for t in range(T - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc = cache[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dwx += dz.T @ X[:, t]
        dwh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dh = dz @ wh
        dc = dc * f
    return loss, dwx, dwh, db, dwy, dby
