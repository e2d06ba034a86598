"""Pure-numpy implementations of the hot kernels.

Semantically identical to the numba versions; float results may differ in
the last ulps because BLAS-backed dot products sum in a different order.
"""

from __future__ import annotations

import numpy as np


def _act(z: np.ndarray, code: int) -> np.ndarray:
    if code == 1:
        return np.tanh(z)
    if code == 2:
        return np.maximum(z, 0.0)
    if code == 3:
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _dact(z: np.ndarray, a: np.ndarray, code: int) -> np.ndarray:
    if code == 1:
        return 1.0 - a * a
    if code == 2:
        return (z > 0.0).astype(np.float64)
    if code == 3:
        return a * (1.0 - a)
    return np.ones_like(z)


def recon_error_grad(x, wp, bp, dims, acts):
    """Mean-squared reconstruction error of an MLP autoencoder and its
    gradient with respect to the input vector ``x``.

    The input appears on both sides of the error (as the target and as the
    network input), so the gradient has a direct term plus the backpropagated
    one.
    """
    n_layers = dims.shape[0]
    h = x
    zs = []
    hs = [x]
    for l in range(n_layers):
        o, i = int(dims[l, 0]), int(dims[l, 1])
        z = wp[l, :o, :i] @ h + bp[l, :o]
        h = _act(z, int(acts[l]))
        zs.append(z)
        hs.append(h)
    n = x.shape[0]
    diff = x - h
    err = float(diff @ diff) / n
    delta = -(2.0 / n) * diff
    for l in range(n_layers - 1, -1, -1):
        o, i = int(dims[l, 0]), int(dims[l, 1])
        dpre = delta * _dact(zs[l], hs[l + 1], int(acts[l]))
        delta = wp[l, :o, :i].T @ dpre
    grad = (2.0 / n) * diff + delta
    return err, grad


def recon_errors(X, wp, bp, dims, acts):
    """Per-row reconstruction errors for a batch (vectorized forward only)."""
    n_layers = dims.shape[0]
    h = X
    for l in range(n_layers):
        o, i = int(dims[l, 0]), int(dims[l, 1])
        z = h @ wp[l, :o, :i].T + bp[l, :o]
        h = _act(z, int(acts[l]))
    diff = X - h
    return np.mean(diff * diff, axis=1)


def sgns_train(walks, walk_lens, window, emb_in, emb_out, lr, negs):
    """One pass of skip-gram-with-negative-sampling updates, in place.

    ``negs`` holds the pregenerated negative node ids, one row per
    (center, context) pair in enumeration order. Returns the number of
    pairs consumed.
    """
    p = 0
    for w in range(walks.shape[0]):
        ln = int(walk_lens[w])
        for i in range(ln):
            c = int(walks[w, i])
            lo = i - window
            if lo < 0:
                lo = 0
            hi = i + window
            if hi > ln - 1:
                hi = ln - 1
            for j in range(lo, hi + 1):
                if j == i:
                    continue
                t = int(walks[w, j])
                vin = emb_in[c]
                dacc = np.zeros_like(vin)
                f = 1.0 / (1.0 + np.exp(-float(vin @ emb_out[t])))
                g = lr * (1.0 - f)
                dacc += g * emb_out[t]
                emb_out[t] += g * vin
                for nid in negs[p]:
                    nid = int(nid)
                    if nid == t:
                        continue
                    f = 1.0 / (1.0 + np.exp(-float(vin @ emb_out[nid])))
                    g = lr * (0.0 - f)
                    dacc += g * emb_out[nid]
                    emb_out[nid] += g * vin
                emb_in[c] += dacc
                p += 1
    return p
