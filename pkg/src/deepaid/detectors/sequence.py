"""Prediction-based sequence detectors.

SequencePredictor: single-layer GRU over one-hot keys with a softmax head;
a window x_1..x_t is anomalous when Pr(x_t | x_1..x_{t-1}) falls below the
calibrated lower-tail threshold t_P.

VectorSequencePredictor: the multivariate variant (GRU over feature
vectors, next-vector regression, MSE loss) used by the multivariate
interpretation path.
"""

from __future__ import annotations

import numpy as np

from .. import gradcore as gc
from ..datahub import arr, register_artifact, unarr
from ..errors import DataFormatError
from ..optim import AdamSet

_GATE_PARAMS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh", "Wo", "bo")


def _init_gru(rng, in_dim: int, hidden: int, out_dim: int) -> dict:
    def mat(o, i):
        lim = np.sqrt(6.0 / (o + i))
        return rng.uniform(-lim, lim, size=(o, i))

    return {
        "Wz": mat(hidden, in_dim), "Uz": mat(hidden, hidden), "bz": np.zeros(hidden),
        "Wr": mat(hidden, in_dim), "Ur": mat(hidden, hidden), "br": np.zeros(hidden),
        "Wh": mat(hidden, in_dim), "Uh": mat(hidden, hidden), "bh": np.zeros(hidden),
        "Wo": mat(out_dim, hidden), "bo": np.zeros(out_dim),
    }


def _build_gru_graph(params: dict, steps: int, in_dim: int, head: str):
    """Unrolled GRU over ``steps`` inputs.

    head="softmax": adds target slot y, exposes prob node p = softmax . y and
    training loss = -sum(y * log_softmax(logits)).
    head="vector": affine readout, loss = mse(readout, y).
    Returns (graph, node_ids dict).
    """
    hidden = params["bz"].shape[0]
    g = gc.DiffGraph()
    xs = [g.input(f"x{i}", (in_dim,)) for i in range(steps)]
    y = g.input("y", (params["Wo"].shape[0],))
    p = {name: g.parameter(name, params[name]) for name in _GATE_PARAMS}
    zero_h = g.parameter("zero_h", np.zeros(hidden))
    h = zero_h
    for i in range(steps):
        zg = g.sigmoid(g.add(g.affine(xs[i], p["Wz"], p["bz"]),
                             g.affine(h, p["Uz"], zero_h)))
        rg = g.sigmoid(g.add(g.affine(xs[i], p["Wr"], p["br"]),
                             g.affine(h, p["Ur"], zero_h)))
        cand = g.tanh(g.add(g.affine(xs[i], p["Wh"], p["bh"]),
                            g.affine(g.mul(rg, h), p["Uh"], zero_h)))
        keep = g.add_scalar(g.scale(zg, -1.0), 1.0)      # 1 - z
        h = g.add(g.mul(keep, h), g.mul(zg, cand))
    logits = g.affine(h, p["Wo"], p["bo"])
    nodes = {"logits": logits}
    if head == "softmax":
        sm = g.softmax(logits)
        nodes["softmax"] = sm
        nodes["prob"] = g.sum(g.mul(sm, y))
        loss = g.scale(g.sum(g.mul(g.log_softmax(logits), y)), -1.0)
    else:
        loss = g.mse(logits, y)
        nodes["pred"] = logits
    g.output(loss)
    nodes["loss"] = loss
    return g, nodes


def one_hot(keys: np.ndarray, n_keys: int) -> np.ndarray:
    return np.eye(n_keys, dtype=np.float64)[np.asarray(keys, dtype=np.int64)]


@register_artifact("sequence_predictor")
class SequencePredictor:
    """Trained next-key model: alphabet n_keys, window length t, GRU hidden."""

    def __init__(self, params: dict, n_keys: int, window: int,
                 threshold: float, quantile: float):
        if window < 2:
            raise DataFormatError("window length must be >= 2")
        if not (0.0 < threshold < 1.0):
            raise DataFormatError("probability threshold must lie in (0, 1)")
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.n_keys = int(n_keys)
        self.window = int(window)
        self.threshold = float(threshold)
        self.quantile = float(quantile)
        self.graph, self.nodes = _build_gru_graph(
            self.params, self.window - 1, self.n_keys, head="softmax")
        # inference graphs differentiate the probability, not the training loss
        self.graph.output(self.nodes["prob"])
        self.graph.freeze()

    @property
    def prefix_len(self) -> int:
        return self.window - 1

    def _check_keys(self, keys) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        if np.any(keys < 0) or np.any(keys >= self.n_keys):
            raise DataFormatError(
                f"key outside the [0, {self.n_keys}) alphabet: {keys.tolist()}"
            )
        return keys

    def _prefix_inputs(self, prefix_onehots: np.ndarray) -> dict:
        feed = {f"x{i}": prefix_onehots[..., i, :] for i in range(self.prefix_len)}
        feed["y"] = np.zeros(self.n_keys)
        return feed

    def predict_next(self, prefix) -> np.ndarray:
        """Distribution over the next key given a prefix of t-1 keys."""
        prefix = self._check_keys(prefix)
        if prefix.shape != (self.prefix_len,):
            raise DataFormatError(f"prefix must have length {self.prefix_len}")
        feed = self._prefix_inputs(one_hot(prefix, self.n_keys))
        return gc.evaluate(self.graph, feed, node=self.nodes["softmax"])

    def predict_next_relaxed(self, prefix_vectors: np.ndarray) -> np.ndarray:
        """Same, but over relaxed (continuous) one-hot prefix vectors."""
        feed = self._prefix_inputs(np.asarray(prefix_vectors, dtype=np.float64))
        return gc.evaluate(self.graph, feed, node=self.nodes["softmax"])

    def score_window(self, window) -> tuple[float, bool]:
        """(probability of the observed final key, is_anomaly)."""
        window = self._check_keys(window)
        if window.shape != (self.window,):
            raise DataFormatError(f"window must have length {self.window}")
        dist = self.predict_next(window[:-1])
        p = float(dist[window[-1]])
        return p, p < self.threshold

    def is_anomaly(self, window) -> bool:
        return self.score_window(window)[1]

    def prob_and_prefix_grads(self, prefix_vectors: np.ndarray,
                              final_onehot: np.ndarray) -> tuple[float, np.ndarray]:
        """Pr(final | relaxed prefix) and d prob / d prefix as (t-1, n_keys)."""
        feed = {f"x{i}": np.asarray(prefix_vectors[i], dtype=np.float64)
                for i in range(self.prefix_len)}
        feed["y"] = np.asarray(final_onehot, dtype=np.float64)
        names = [f"x{i}" for i in range(self.prefix_len)]
        val, grads = gc.value_and_grads(self.graph, feed, names)
        return float(val), np.stack([grads[n] for n in names])

    def to_doc(self) -> dict:
        return {
            "params": {k: arr(v) for k, v in self.params.items()},
            "n_keys": self.n_keys, "window": self.window,
            "threshold": self.threshold, "quantile": self.quantile,
        }

    @classmethod
    def from_doc(cls, d: dict) -> "SequencePredictor":
        return cls({k: unarr(v) for k, v in d["params"].items()},
                   d["n_keys"], d["window"], d["threshold"], d["quantile"])


def sliding_windows(sequences: list, window: int) -> np.ndarray:
    out = []
    for s in sequences:
        s = np.asarray(s, dtype=np.int64)
        if len(s) < window:
            raise DataFormatError(f"sequence of length {len(s)} shorter than window {window}")
        for i in range(len(s) - window + 1):
            out.append(s[i:i + window])
    return np.asarray(out, dtype=np.int64)


def train_sequence_predictor(normal_sequences: list, n_keys: int, window: int,
                             epochs: int, seed: int, hidden: int = 32,
                             lr: float = 5e-3, batch_size: int = 128,
                             quantile: float = 0.005) -> SequencePredictor:
    """Fit the GRU on sliding windows of normal sequences; t_P is the
    lower-tail ``quantile`` of training next-key probabilities."""
    for s in normal_sequences:
        s = np.asarray(s)
        if np.any(s < 0) or np.any(s >= n_keys):
            raise DataFormatError("sequence key outside the alphabet")
    windows = sliding_windows(normal_sequences, window)
    rng = np.random.default_rng(seed)
    params = _init_gru(rng, n_keys, hidden, n_keys)
    graph, nodes = _build_gru_graph(params, window - 1, n_keys, head="softmax")
    pnames = [p for p in graph.parameter_names if p != "zero_h"]
    opt = AdamSet({p: graph.get_parameter(p).shape for p in pnames}, lr=lr)

    eye = np.eye(n_keys, dtype=np.float64)
    m = len(windows)
    for _ in range(int(epochs)):
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            idx = order[start:start + batch_size]
            batch = windows[idx]
            feed = {f"x{i}": eye[batch[:, i]] for i in range(window - 1)}
            feed["y"] = eye[batch[:, -1]]
            _, grads = gc.value_and_grads(graph, feed, pnames)
            inv = 1.0 / len(idx)
            vals = {p: graph.get_parameter(p) for p in pnames}
            stepped = opt.step(vals, {p: g * inv for p, g in grads.items()})
            for p, v in stepped.items():
                graph.set_parameter(p, v, copy=False)

    trained = {p: graph.get_parameter(p).copy() for p in pnames}
    probe = SequencePredictor(trained, n_keys, window, threshold=0.5,
                              quantile=quantile)
    probs = np.empty(m)
    for i, w in enumerate(windows):
        probs[i] = probe.score_window(w)[0]
    threshold = float(np.quantile(probs, quantile))
    threshold = min(max(threshold, 1e-9), 1.0 - 1e-9)
    return SequencePredictor(trained, n_keys, window, threshold, quantile)


# ------------------------------------------------------------- multivariate


@register_artifact("vector_sequence_predictor")
class VectorSequencePredictor:
    """GRU over feature vectors predicting the next vector; MSE loss with an
    upper-tail threshold. Serves the multivariate interpretation path."""

    def __init__(self, params: dict, n_dims: int, window: int,
                 threshold: float, quantile: float):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.n_dims = int(n_dims)
        self.window = int(window)
        self.threshold = float(threshold)
        self.quantile = float(quantile)
        self.graph, self.nodes = _build_gru_graph(
            self.params, self.window - 1, self.n_dims, head="vector")
        self.graph.freeze()

    @property
    def prefix_len(self) -> int:
        return self.window - 1

    def _feed(self, window_vectors: np.ndarray) -> dict:
        w = np.asarray(window_vectors, dtype=np.float64)
        if w.shape != (self.window, self.n_dims):
            raise DataFormatError(
                f"expected window of shape {(self.window, self.n_dims)}, got {w.shape}"
            )
        feed = {f"x{i}": w[i] for i in range(self.prefix_len)}
        feed["y"] = w[-1]
        return feed

    def loss(self, window_vectors: np.ndarray) -> float:
        return float(gc.evaluate(self.graph, self._feed(window_vectors)))

    def score_window(self, window_vectors: np.ndarray) -> tuple[float, bool]:
        v = self.loss(window_vectors)
        return v, v >= self.threshold

    def point_gradients(self, window_vectors: np.ndarray) -> np.ndarray:
        """d loss / d each window vector, shape (t, n_dims); the final point's
        gradient flows through the regression target."""
        feed = self._feed(window_vectors)
        names = [f"x{i}" for i in range(self.prefix_len)] + ["y"]
        _, grads = gc.value_and_grads(self.graph, feed, names)
        return np.stack([grads[n] for n in names])

    def to_doc(self) -> dict:
        return {
            "params": {k: arr(v) for k, v in self.params.items()},
            "n_dims": self.n_dims, "window": self.window,
            "threshold": self.threshold, "quantile": self.quantile,
        }

    @classmethod
    def from_doc(cls, d: dict) -> "VectorSequencePredictor":
        return cls({k: unarr(v) for k, v in d["params"].items()},
                   d["n_dims"], d["window"], d["threshold"], d["quantile"])


def train_vector_predictor(windows: np.ndarray, epochs: int, seed: int,
                           hidden: int = 32, lr: float = 5e-3,
                           batch_size: int = 128,
                           quantile: float = 0.995) -> VectorSequencePredictor:
    """Fit on (m, t, n) normal windows; threshold = upper-tail loss quantile."""
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim != 3:
        raise DataFormatError("expected windows of shape (m, t, n)")
    m, t, n = w.shape
    rng = np.random.default_rng(seed)
    params = _init_gru(rng, n, hidden, n)
    graph, _ = _build_gru_graph(params, t - 1, n, head="vector")
    pnames = [p for p in graph.parameter_names if p != "zero_h"]
    opt = AdamSet({p: graph.get_parameter(p).shape for p in pnames}, lr=lr)
    for _ in range(int(epochs)):
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            batch = w[order[start:start + batch_size]]
            feed = {f"x{i}": batch[:, i, :] for i in range(t - 1)}
            feed["y"] = batch[:, -1, :]
            _, grads = gc.value_and_grads(graph, feed, pnames)
            vals = {p: graph.get_parameter(p) for p in pnames}
            for p, v in opt.step(vals, grads).items():
                graph.set_parameter(p, v, copy=False)
    trained = {p: graph.get_parameter(p).copy() for p in pnames}
    probe = VectorSequencePredictor(trained, n, t, threshold=1.0, quantile=quantile)
    losses = np.array([probe.loss(w[i]) for i in range(m)])
    threshold = float(np.quantile(losses, quantile))
    return VectorSequencePredictor(trained, n, t, threshold, quantile)
