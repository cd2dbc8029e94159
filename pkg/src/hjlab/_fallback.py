"""Pure numpy versions of the compiled sweeps in ``_kernels.pyx``."""

import numpy as np


def extremal_sweep(phi, g_pos, g_neg, dx, K, kmin, upper):
    phi = np.asarray(phi, dtype=float)
    n = phi.size
    idx = np.arange(n)
    js = np.arange(1, K + 1)
    vals, ks = [], []
    for s, g in ((1, g_pos), (-1, g_neg)):
        target = (idx[None, :] + s * js[:, None]) % n
        h = ((s * js) * dx)[:, None]
        num = (phi[target] - phi[None, :]) - h * np.asarray(g, dtype=float)[None, :]
        kj = np.maximum(js, kmin)[:, None] * np.ones((1, n), dtype=np.int64)
        dj = kj * dx
        near = num / (dj * dj)
        dK = K * dx
        far = num / (dK * dK)
        use_near = num > 0.0 if upper else num < 0.0
        vals.append(np.where(use_near, near, far))
        ks.append(np.where(use_near, kj, K))
    vals = np.concatenate(vals, axis=0)
    ks = np.concatenate(ks, axis=0)
    pick = np.argmax(vals, axis=0) if upper else np.argmin(vals, axis=0)
    best = vals[pick, idx]
    bj = js[pick % K].astype(np.int64)
    bk = ks[pick, idx].astype(np.int64)
    bs = np.where(pick < K, 1, -1).astype(np.int64)
    return best, bj, bk, bs


def levy_sweep(phi, g_pos, g_neg, shifts, weights, dx):
    phi = np.asarray(phi, dtype=float)
    n = phi.size
    idx = np.arange(n)
    out = np.zeros(n)
    for a in range(shifts.shape[0]):
        sh = shifts[a]
        fl = np.floor(sh)
        th = sh - fl
        i0 = (idx + fl.astype(np.int64)) % n
        i1 = (i0 + 1) % n
        val = (1.0 - th) * phi[i0] + th * phi[i1]
        g = np.where(sh > 0.0, g_pos, g_neg)
        out = out + weights[a] * ((val - phi) - (sh * dx) * g)
    return out
