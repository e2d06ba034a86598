"""Numba-compiled hot kernels (see _numpy.py for the reference semantics).

Weights arrive zero-padded to a square (layers, maxd, maxd) block so the
kernels stay free of reflected lists; loops are written out because the
padded slices are not BLAS-contiguous anyway.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _forward(x, wp, bp, dims, acts, H, Z):
    n_layers = dims.shape[0]
    for k in range(x.shape[0]):
        H[0, k] = x[k]
    for l in range(n_layers):
        o = dims[l, 0]
        i = dims[l, 1]
        for r in range(o):
            s = bp[l, r]
            for c in range(i):
                s += wp[l, r, c] * H[l, c]
            Z[l, r] = s
            if acts[l] == 1:
                H[l + 1, r] = math.tanh(s)
            elif acts[l] == 2:
                H[l + 1, r] = s if s > 0.0 else 0.0
            elif acts[l] == 3:
                H[l + 1, r] = 1.0 / (1.0 + math.exp(-s))
            else:
                H[l + 1, r] = s


@njit(cache=True)
def recon_error_grad(x, wp, bp, dims, acts):
    n_layers = dims.shape[0]
    maxd = wp.shape[1]
    n = x.shape[0]
    H = np.zeros((n_layers + 1, maxd))
    Z = np.zeros((n_layers, maxd))
    _forward(x, wp, bp, dims, acts, H, Z)

    err = 0.0
    for k in range(n):
        d = x[k] - H[n_layers, k]
        err += d * d
    err /= n

    delta = np.zeros(maxd)
    for k in range(n):
        delta[k] = -(2.0 / n) * (x[k] - H[n_layers, k])
    for l in range(n_layers - 1, -1, -1):
        o = dims[l, 0]
        i = dims[l, 1]
        dpre = np.zeros(maxd)
        for r in range(o):
            a = H[l + 1, r]
            if acts[l] == 1:
                dpre[r] = delta[r] * (1.0 - a * a)
            elif acts[l] == 2:
                dpre[r] = delta[r] if Z[l, r] > 0.0 else 0.0
            elif acts[l] == 3:
                dpre[r] = delta[r] * a * (1.0 - a)
            else:
                dpre[r] = delta[r]
        nxt = np.zeros(maxd)
        for c in range(i):
            s = 0.0
            for r in range(o):
                s += wp[l, r, c] * dpre[r]
            nxt[c] = s
        delta = nxt

    grad = np.empty(n)
    for k in range(n):
        grad[k] = (2.0 / n) * (x[k] - H[n_layers, k]) + delta[k]
    return err, grad


@njit(cache=True)
def recon_errors(X, wp, bp, dims, acts):
    n_layers = dims.shape[0]
    maxd = wp.shape[1]
    n = X.shape[1]
    out = np.empty(X.shape[0])
    H = np.zeros((n_layers + 1, maxd))
    Z = np.zeros((n_layers, maxd))
    for b in range(X.shape[0]):
        _forward(X[b], wp, bp, dims, acts, H, Z)
        err = 0.0
        for k in range(n):
            d = X[b, k] - H[n_layers, k]
            err += d * d
        out[b] = err / n
    return out


@njit(cache=True)
def sgns_train(walks, walk_lens, window, emb_in, emb_out, lr, negs):
    d = emb_in.shape[1]
    dacc = np.zeros(d)
    p = 0
    for w in range(walks.shape[0]):
        ln = walk_lens[w]
        for i in range(ln):
            c = walks[w, i]
            lo = i - window
            if lo < 0:
                lo = 0
            hi = i + window
            if hi > ln - 1:
                hi = ln - 1
            for j in range(lo, hi + 1):
                if j == i:
                    continue
                t = walks[w, j]
                for k in range(d):
                    dacc[k] = 0.0
                f = 0.0
                for k in range(d):
                    f += emb_in[c, k] * emb_out[t, k]
                g = lr * (1.0 - 1.0 / (1.0 + math.exp(-f)))
                for k in range(d):
                    dacc[k] += g * emb_out[t, k]
                    emb_out[t, k] += g * emb_in[c, k]
                for nn in range(negs.shape[1]):
                    nid = negs[p, nn]
                    if nid == t:
                        continue
                    f = 0.0
                    for k in range(d):
                        f += emb_in[c, k] * emb_out[nid, k]
                    g = lr * (0.0 - 1.0 / (1.0 + math.exp(-f)))
                    for k in range(d):
                        dacc[k] += g * emb_out[nid, k]
                        emb_out[nid, k] += g * emb_in[c, k]
                for k in range(d):
                    emb_in[c, k] += dacc[k]
                p += 1
    return p
