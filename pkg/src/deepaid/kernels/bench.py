"""Benchmark the numba kernels against their pure-numpy mirrors."""

from __future__ import annotations

import time

import numpy as np

from . import BACKEND, count_pairs, get_backend, pack_mlp


def _time(fn, repeats: int) -> float:
    fn()  # warm once (JIT compile / cache touch)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def run_bench(n_dims: int = 100, repeats: int = 2000) -> dict:
    rng = np.random.default_rng(0)
    sizes = [n_dims, max(8, n_dims // 3), max(4, n_dims // 12),
             max(8, n_dims // 3), n_dims]
    weights, biases = [], []
    for o, i in zip(sizes[1:], sizes[:-1]):
        weights.append(rng.normal(scale=0.3, size=(o, i)))
        biases.append(np.zeros(o))
    acts = [1] * (len(weights) - 1) + [0]
    packed = pack_mlp(weights, biases, acts)
    x = rng.random(n_dims)

    walks = rng.integers(0, 50, size=(40, 20)).astype(np.int64)
    lens = np.full(40, 20, dtype=np.int64)
    n_pairs = count_pairs(lens, 4)
    negs = rng.integers(0, 50, size=(n_pairs, 5)).astype(np.int64)

    rows = {}
    backends = ["numpy"]
    try:
        get_backend("numba")
        backends.append("numba")
    except ImportError:
        pass
    for name in backends:
        mod = get_backend(name)
        t_grad = _time(lambda: mod.recon_error_grad(x, *packed), repeats)
        emb_in = rng.random((50, 16)) * 0.1
        emb_out = np.zeros((50, 16))
        t_sgns = _time(lambda: mod.sgns_train(walks, lens, 4, emb_in, emb_out,
                                              0.01, negs), max(3, repeats // 200))
        rows[name] = {"recon_error_grad_us": t_grad * 1e6,
                      "sgns_epoch_ms": t_sgns * 1e3}

    print(f"active backend: {BACKEND}")
    print(f"{'backend':<8} {'recon_error_grad':>18} {'sgns epoch':>14}")
    for name, r in rows.items():
        print(f"{name:<8} {r['recon_error_grad_us']:>15.1f} us "
              f"{r['sgns_epoch_ms']:>11.2f} ms")
    if len(rows) == 2:
        s1 = rows["numpy"]["recon_error_grad_us"] / rows["numba"]["recon_error_grad_us"]
        s2 = rows["numpy"]["sgns_epoch_ms"] / rows["numba"]["sgns_epoch_ms"]
        print(f"speedup (numpy/numba): recon {s1:.1f}x, sgns {s2:.1f}x")
    return rows
