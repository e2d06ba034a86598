"""Interpretation of univariate discrete-sequence anomalies, plus the
multivariate extension.

A window x_1..x_t is anomalous when the predictor's probability for the
observed final key falls below its threshold. Saliency testing attributes
the anomaly either to the final key itself (both conditions of the test
hold: the objective's gradient over the relaxed prefix is uniformly small,
and the predictor is confident about a different key) or to the prefix.

Final-key branch: the reference replaces x_t with the predictor's argmax
key and nothing else. Prefix branch: the relaxed one-hot prefix is
optimized with Adam against the bounded loss

    D(X*) = ReLU((t_P + eps) - Pr(x_t | x*_1..x*_{t-1}))

keeping only the argmax-gradient position per iteration, re-discretizing
to one-hots, and stopping as soon as the discretized window scores normal.

The multivariate extension locates influential points by gradient norm of
the prediction loss and delegates each located point to the tabular
interpreter through a prediction-loss detector wrapper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .datahub import register_artifact
from .detectors.sequence import SequencePredictor, VectorSequencePredictor, one_hot
from .errors import DataFormatError, NotAnomalyError
from .interp_tabular import TabularInterpConfig, interpret_tabular
from .optim import Adam


@dataclass
class SaliencyConfig:
    mu1: float = 0.01
    mu2: float = 0.3
    eps: float = 0.01
    alpha: float = 0.5
    max_iter: int = 20
    steps_per_iter: int = 32

    def __post_init__(self):
        if self.mu1 <= 0:
            raise DataFormatError("mu1 must be positive")
        if not 0 < self.mu2 < 1:
            raise DataFormatError("mu2 must lie in (0, 1)")
        if self.eps <= 0 or self.alpha <= 0:
            raise DataFormatError("eps and alpha must be positive")

    def check_alphabet(self, n_keys: int) -> None:
        # a confidence bound at or below the uniform mass can never fire
        if self.mu2 <= 1.0 / n_keys:
            raise DataFormatError(
                f"mu2={self.mu2} must exceed 1/n_keys = {1.0 / n_keys:.4f}"
            )


@register_artifact("sequence_interpretation")
@dataclass
class SequenceInterpretation:
    window: np.ndarray
    reference: np.ndarray
    branch: str                      # "final" or "prefix"
    changed: list                    # [(position, old_key, new_key)]
    converged: bool
    probability: float               # Pr(ref final | ref prefix)

    def to_doc(self) -> dict:
        return {
            "window": [int(k) for k in self.window],
            "reference": [int(k) for k in self.reference],
            "branch": self.branch,
            "changed": [[int(p), int(o), int(n)] for p, o, n in self.changed],
            "converged": self.converged,
            "probability": self.probability,
        }

    @classmethod
    def from_doc(cls, d: dict) -> "SequenceInterpretation":
        return cls(np.asarray(d["window"], dtype=np.int64),
                   np.asarray(d["reference"], dtype=np.int64),
                   d["branch"],
                   [tuple(c) for c in d["changed"]],
                   bool(d["converged"]), float(d["probability"]))


def _objective_grad(predictor: SequencePredictor, prefix_vectors, final_key,
                    eps: float):
    """D_ts value and its gradient over the relaxed prefix entries."""
    y = one_hot(np.asarray([final_key]), predictor.n_keys)[0]
    p, dp = predictor.prob_and_prefix_grads(prefix_vectors, y)
    slack = (predictor.threshold + eps) - p
    if slack > 0.0:
        return max(slack, 0.0), -dp, p
    return 0.0, np.zeros_like(dp), p


def saliency_test(window, predictor: SequencePredictor,
                  config: SaliencyConfig) -> bool:
    """True when the anomaly is attributable to the final key alone."""
    window = np.asarray(window, dtype=np.int64)
    config.check_alphabet(predictor.n_keys)
    _, flagged = predictor.score_window(window)
    if not flagged:
        raise NotAnomalyError("window scores normal; not an anomaly")
    prefix_vec = one_hot(window[:-1], predictor.n_keys)
    _, grad, _ = _objective_grad(predictor, prefix_vec, int(window[-1]), config.eps)
    dist = predictor.predict_next(window[:-1])
    xc = int(np.argmax(dist))
    cond_flat_gradient = float(np.max(grad)) < config.mu1
    cond_confident_alt = (float(dist[xc]) > config.mu2) and (xc != int(window[-1]))
    return cond_flat_gradient and cond_confident_alt


def saliency_gradient_max(window, predictor: SequencePredictor,
                          eps: float = 0.01) -> float:
    """max entry of the objective gradient over the relaxed prefix (the
    quantity thresholded by mu1)."""
    window = np.asarray(window, dtype=np.int64)
    prefix_vec = one_hot(window[:-1], predictor.n_keys)
    _, grad, _ = _objective_grad(predictor, prefix_vec, int(window[-1]), eps)
    return float(np.max(grad))


def calibrate_mu1(predictor: SequencePredictor, final_like, prefix_like,
                  eps: float = 0.01) -> float:
    """Place mu1 between the gradient scales of the two anomaly families.

    ``final_like`` are windows believed anomalous in their last key (their
    gradient maxima are small), ``prefix_like`` windows anomalous in the
    prefix (large maxima). Returns the geometric mean of the two medians.
    Gradient scales are model-dependent, so a fixed constant does not
    transfer between retrained predictors.
    """
    f = [max(saliency_gradient_max(w, predictor, eps), 1e-12) for w in final_like]
    p = [max(saliency_gradient_max(w, predictor, eps), 1e-12) for w in prefix_like]
    if not f or not p:
        raise DataFormatError("both calibration families must be non-empty")
    return float(np.sqrt(np.median(f) * np.median(p)))


def interpret_sequence(window, predictor: SequencePredictor,
                       config: SaliencyConfig) -> SequenceInterpretation:
    window = np.asarray(window, dtype=np.int64)
    if window.shape != (predictor.window,):
        raise DataFormatError(f"window must have length {predictor.window}")
    p_obs, flagged = predictor.score_window(window)
    if not flagged:
        raise NotAnomalyError("window scores normal; not an anomaly")

    if saliency_test(window, predictor, config):
        dist = predictor.predict_next(window[:-1])
        xc = int(np.argmax(dist))
        ref = window.copy()
        ref[-1] = xc
        p_ref, still = predictor.score_window(ref)
        return SequenceInterpretation(
            window, ref, "final",
            [(predictor.window - 1, int(window[-1]), xc)],
            not still, p_ref,
        )
    return _interpret_prefix(window, predictor, config)


def _interpret_prefix(window, predictor, config) -> SequenceInterpretation:
    """Iterative correction of the prefix with the final key fixed.

    Each iteration relaxes the current window's prefix, runs Adam on the
    bounded loss, keeps the position holding the largest objective
    gradient, and snaps that position back to a one-hot. An edit is kept
    only if it raises the final-key probability; rejected positions are
    excluded from later selections, so failed edits never accumulate.
    """
    n_keys = predictor.n_keys
    t_prefix = predictor.prefix_len
    final_key = int(window[-1])
    current = window.copy()
    p_cur, _ = predictor.score_window(current)
    rejected: set = set()

    for _ in range(config.max_iter):
        relaxed = one_hot(current[:-1], n_keys).astype(np.float64)
        adam = Adam(relaxed.shape, lr=config.alpha)
        for _ in range(config.steps_per_iter):
            _, grad, _ = _objective_grad(predictor, relaxed, final_key, config.eps)
            relaxed = adam.step(relaxed, grad)
        _, grad, _ = _objective_grad(predictor, relaxed, final_key, config.eps)
        by_pos = grad.max(axis=1)
        order = np.lexsort((np.arange(t_prefix), -by_pos))
        pos = next((int(i) for i in order if int(i) not in rejected), None)
        if pos is None:
            break
        candidate = current.copy()
        candidate[pos] = int(np.argmax(relaxed[pos]))
        p_new, still = predictor.score_window(candidate)
        if p_new > p_cur and candidate[pos] != current[pos]:
            current, p_cur = candidate, p_new
        else:
            rejected.add(pos)
        if not predictor.score_window(current)[1]:
            break

    changed = [(i, int(window[i]), int(current[i]))
               for i in range(t_prefix) if current[i] != window[i]]
    p, still = predictor.score_window(current)
    return SequenceInterpretation(window, current, "prefix", changed,
                                  not still, p)


# ------------------------------------------------------------- multivariate


class PointLossDetector:
    """Tabular-detector facade over a vector-sequence predictor's loss as a
    function of one window position; lets interpret_tabular search a
    reference for that point."""

    def __init__(self, predictor: VectorSequencePredictor, window_vectors,
                 position: int):
        self.predictor = predictor
        self.window = np.asarray(window_vectors, dtype=np.float64).copy()
        self.position = int(position)
        self.threshold = predictor.threshold
        self.slot = (f"x{self.position}"
                     if self.position < predictor.prefix_len else "y")

    @property
    def n_dims(self) -> int:
        return self.predictor.n_dims

    def _with_point(self, x):
        w = self.window.copy()
        w[self.position] = x
        return w

    def errors(self, rows) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        return np.array([self.predictor.loss(self._with_point(r)) for r in rows])

    def error_value_and_grad(self, x):
        feed = self.predictor._feed(self._with_point(x))
        val, grads = gc.value_and_grads(self.predictor.graph, feed, [self.slot])
        return float(val), grads[self.slot]

    def score(self, x):
        err = float(self.errors(x[None, :])[0])
        return err, err >= self.threshold


def locate_influential_points(window_vectors, predictor: VectorSequencePredictor,
                              n_points: int = 1) -> list:
    """Positions ranked by gradient norm of the prediction loss."""
    grads = predictor.point_gradients(window_vectors)
    norms = np.linalg.norm(grads, axis=1)
    order = np.lexsort((np.arange(norms.size), -norms))
    return [int(i) for i in order[:n_points]]


def interpret_multivariate(window_vectors, predictor: VectorSequencePredictor,
                           tab_config: TabularInterpConfig,
                           n_points: int = 1, seed: int | None = None) -> list:
    """Locate influential points, then run the tabular search on each.

    Returns [(position, Interpretation)]; raises when the window already
    scores normal.
    """
    w = np.asarray(window_vectors, dtype=np.float64)
    _, flagged = predictor.score_window(w)
    if not flagged:
        raise NotAnomalyError("window scores normal; not an anomaly")
    results = []
    for pos in locate_influential_points(w, predictor, n_points):
        facade = PointLossDetector(predictor, w, pos)
        results.append((pos, interpret_tabular(w[pos], facade, tab_config, seed=seed)))
    return results
