"""Backend selection for the numeric hot paths.

Two interchangeable implementations exist: numba-compiled loops
(``_numba``) and a pure-numpy mirror (``_numpy``). The environment variable
``DEEPAID_NUMBA`` picks one:

    DEEPAID_NUMBA=0   force the numpy fallback
    DEEPAID_NUMBA=1   require numba (import error surfaces)
    unset             numba when importable, numpy otherwise

``benchmarks/kernel_bench.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy

_flag = os.environ.get("DEEPAID_NUMBA", "").strip().lower()

if _flag in ("0", "off", "false", "no"):
    _impl = _numpy
    BACKEND = "numpy"
elif _flag in ("1", "on", "true", "yes", "required"):
    from . import _numba as _impl  # noqa: F401
    BACKEND = "numba"
else:
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        _impl = _numpy
        BACKEND = "numpy"

recon_error_grad = _impl.recon_error_grad
recon_errors = _impl.recon_errors
sgns_train = _impl.sgns_train


def get_backend(name: str):
    """Return a specific backend module (used by equivalence tests/bench)."""
    if name == "numpy":
        return _numpy
    if name == "numba":
        from . import _numba
        return _numba
    raise ValueError(f"unknown kernel backend {name!r}")


def pack_mlp(weights: list, biases: list, acts: list):
    """Zero-pad an MLP's layers into the square block layout kernels expect."""
    n_layers = len(weights)
    maxd = max(max(w.shape) for w in weights)
    wp = np.zeros((n_layers, maxd, maxd), dtype=np.float64)
    bp = np.zeros((n_layers, maxd), dtype=np.float64)
    dims = np.zeros((n_layers, 2), dtype=np.int64)
    for l, (w, b) in enumerate(zip(weights, biases)):
        o, i = w.shape
        wp[l, :o, :i] = w
        bp[l, :o] = b
        dims[l, 0] = o
        dims[l, 1] = i
    return wp, bp, dims, np.asarray(acts, dtype=np.int64)


def count_pairs(walk_lens, window: int) -> int:
    """Number of (center, context) pairs sgns_train will enumerate."""
    total = 0
    for ln in walk_lens:
        ln = int(ln)
        for i in range(ln):
            lo = max(0, i - window)
            hi = min(ln - 1, i + window)
            total += hi - lo
    return total


def warmup() -> None:
    """Trigger JIT compilation with token-size inputs (no-op on numpy)."""
    if BACKEND != "numba":
        return
    w = [np.ones((2, 3)), np.ones((3, 2))]
    b = [np.zeros(2), np.zeros(3)]
    wp, bp, dims, acts = pack_mlp(w, b, [1, 0])
    recon_error_grad(np.zeros(3), wp, bp, dims, acts)
    recon_errors(np.zeros((2, 3)), wp, bp, dims, acts)
    walks = np.array([[0, 1, 0]], dtype=np.int64)
    lens = np.array([3], dtype=np.int64)
    negs = np.zeros((count_pairs(lens, 1), 2), dtype=np.int64)
    sgns_train(walks, lens, 1, np.zeros((2, 2)), np.zeros((2, 2)), 0.0, negs)
