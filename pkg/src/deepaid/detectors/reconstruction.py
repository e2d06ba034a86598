"""Reconstruction-based anomaly detector: a small MLP autoencoder whose
mean-squared reconstruction error is thresholded at a calibrated quantile
of the training errors. Inputs are expected in normalized [0, 1] space; the
attached NormalizationSpec maps raw features in and out for display.
"""

from __future__ import annotations

import warnings

import numpy as np

from .. import gradcore as gc
from .. import kernels
from ..datahub import (NormalizationSpec, arr, identity_normalization,
                       register_artifact, unarr)
from ..errors import DataFormatError, GraphError
from ..optim import AdamSet

_ACT_CODES = {"linear": 0, "tanh": 1, "relu": 2, "sigmoid": 3}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def _glorot(rng, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def _build_loss_graph(weights, biases, acts):
    """x -> autoencoder -> mse(x, reconstruction); params shared with arrays."""
    n = weights[0].shape[1]
    g = gc.DiffGraph()
    x = g.input("x", (n,))
    h = x
    for l, (w, b) in enumerate(zip(weights, biases)):
        wid = g.parameter(f"W{l}", w)
        bid = g.parameter(f"b{l}", b)
        h = g.affine(h, wid, bid)
        code = acts[l]
        if code == 1:
            h = g.tanh(h)
        elif code == 2:
            h = g.relu(h)
        elif code == 3:
            h = g.sigmoid(h)
    err = g.mse(x, h)
    g.output(err)
    return g, h


@register_artifact("reconstruction_detector")
class ReconstructionDetector:
    """Frozen autoencoder + calibrated threshold.

    ``error_kind`` selects the published error function ("mse" or "rmse");
    the anomaly rule is error >= threshold (the boundary counts as abnormal).
    """

    def __init__(self, weights, biases, acts, threshold: float, quantile: float,
                 norm: NormalizationSpec | None = None, error_kind: str = "mse",
                 feature_names: list | None = None, use_graph: bool = False):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.acts = [int(a) for a in acts]
        n = self.weights[0].shape[1]
        if self.weights[-1].shape[0] != n:
            raise DataFormatError("autoencoder output dimensionality must equal input")
        if error_kind not in ("mse", "rmse"):
            raise DataFormatError(f"unknown error kind {error_kind!r}")
        if threshold <= 0.0:
            raise DataFormatError("calibrated threshold must be positive")
        self.threshold = float(threshold)
        self.quantile = float(quantile)
        self.norm = norm if norm is not None else identity_normalization(n)
        self.error_kind = error_kind
        self.feature_names = feature_names or [f"f{i}" for i in range(n)]
        self.use_graph = use_graph

        self.graph, self._recon_node = _build_loss_graph(
            self.weights, self.biases, self.acts)
        self.graph.freeze()
        self._packed = kernels.pack_mlp(self.weights, self.biases, self.acts)

    # ------------------------------------------------------------- inference

    @property
    def n_dims(self) -> int:
        return self.weights[0].shape[1]

    def _check_vec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_dims,):
            raise DataFormatError(
                f"expected a vector of dimension {self.n_dims}, got shape {x.shape}"
            )
        if np.any(x < 0.0) or np.any(x > 1.0):
            warnings.warn("input outside [0,1] clamped before scoring", stacklevel=3)
            x = np.clip(x, 0.0, 1.0)
        return x

    def _to_published(self, mse_val: float) -> float:
        return float(np.sqrt(mse_val)) if self.error_kind == "rmse" else float(mse_val)

    def error_value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Published error at ``x`` and its gradient (kernel or graph path)."""
        x = np.asarray(x, dtype=np.float64)
        if self.use_graph:
            val, grads = gc.value_and_grads(self.graph, {"x": x}, ["x"])
            g = grads["x"]
        else:
            val, g = kernels.recon_error_grad(x, *self._packed)
        if self.error_kind == "rmse":
            r = float(np.sqrt(val))
            return r, g / (2.0 * r) if r > 0.0 else np.zeros_like(g)
        return float(val), g

    def errors(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if self.use_graph:
            out = np.empty(len(rows))
            for i, r in enumerate(rows):
                out[i] = float(gc.evaluate(self.graph, {"x": r}))
        else:
            out = kernels.recon_errors(np.ascontiguousarray(rows), *self._packed)
        return np.sqrt(out) if self.error_kind == "rmse" else out

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return gc.evaluate(self.graph, {"x": np.asarray(x, dtype=np.float64)},
                           node=self._recon_node)

    def score(self, x) -> tuple[float, bool]:
        """(error, is_anomaly); anomaly iff error >= threshold."""
        x = self._check_vec(x)
        err = float(self.errors(x[None, :])[0])
        return err, err >= self.threshold

    def is_anomaly(self, x) -> bool:
        return self.score(x)[1]

    # ----------------------------------------------------------- persistence

    def to_doc(self) -> dict:
        return {
            "weights": [arr(w) for w in self.weights],
            "biases": [arr(b) for b in self.biases],
            "acts": self.acts,
            "threshold": self.threshold,
            "quantile": self.quantile,
            "norm": self.norm.to_doc(),
            "error_kind": self.error_kind,
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_doc(cls, d: dict) -> "ReconstructionDetector":
        return cls(
            [unarr(w) for w in d["weights"]],
            [unarr(b) for b in d["biases"]],
            d["acts"], d["threshold"], d["quantile"],
            NormalizationSpec.from_doc(d["norm"]),
            d["error_kind"], list(d["feature_names"]),
        )


def train_reconstruction(normal_rows: np.ndarray, layer_sizes: list, epochs: int,
                         seed: int, quantile: float = 0.995, lr: float = 5e-3,
                         batch_size: int = 128, hidden_act: str = "tanh",
                         error_kind: str = "mse",
                         norm: NormalizationSpec | None = None,
                         feature_names: list | None = None) -> ReconstructionDetector:
    """Train the autoencoder on normal rows (already normalized to [0, 1]).

    ``layer_sizes`` are the hidden widths; the full net is
    N -> layer_sizes... -> N with ``hidden_act`` between hidden layers and a
    linear output. The threshold is the ``quantile`` of training errors.
    """
    rows = np.asarray(normal_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 100:
        raise DataFormatError("training needs a 2-D array of at least 100 normal rows")
    if np.any(rows < 0.0) or np.any(rows > 1.0):
        raise DataFormatError("training rows must lie within the [0,1] bounds")
    if float(np.max(rows.var(axis=0))) == 0.0:
        raise DataFormatError("degenerate training data: zero variance in every dimension")

    n = rows.shape[1]
    sizes = [n] + [int(s) for s in layer_sizes] + [n]
    act_code = _ACT_CODES[hidden_act]
    acts = [act_code] * (len(sizes) - 2) + [0]

    rng = np.random.default_rng(seed)
    weights = [_glorot(rng, sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]
    biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]

    graph, _ = _build_loss_graph(weights, biases, acts)
    pnames = graph.parameter_names
    opt = AdamSet({p: graph.get_parameter(p).shape for p in pnames}, lr=lr)

    m = rows.shape[0]
    for _ in range(int(epochs)):
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            batch = rows[order[start:start + batch_size]]
            _, grads = gc.value_and_grads(graph, {"x": batch}, pnames)
            vals = {p: graph.get_parameter(p) for p in pnames}
            for p, v in opt.step(vals, grads).items():
                graph.set_parameter(p, v, copy=False)

    final_w = [graph.get_parameter(f"W{l}").copy() for l in range(len(weights))]
    final_b = [graph.get_parameter(f"b{l}").copy() for l in range(len(biases))]

    probe = ReconstructionDetector(final_w, final_b, acts, threshold=1.0,
                                   quantile=quantile, norm=norm,
                                   error_kind=error_kind,
                                   feature_names=feature_names)
    train_errors = probe.errors(rows)
    threshold = float(np.quantile(train_errors, quantile))
    if threshold <= 0.0:
        raise GraphError("calibration produced a non-positive threshold")
    return ReconstructionDetector(final_w, final_b, acts, threshold, quantile,
                                  norm, error_kind, feature_names)
