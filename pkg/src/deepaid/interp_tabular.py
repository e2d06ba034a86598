"""Reference search for tabular anomalies.

Given an anomaly x° the interpreter finds a nearby reference x* the
detector scores as normal by minimizing, with Adam under a tanh change of
variables (every iterate stays strictly inside the value bounds),

    D(x*) = ReLU(error(x*) - (threshold - eps)) + lam * ||x* - x°||_2

The bounded first term parks the search just inside the decision boundary
instead of collapsing to the data manifold; the second keeps the reference
close to the anomaly.

Dimension attribution runs against committed sparse points: starting from
the anomaly, the gradient-times-input ranking selects the next effective
dimension(s), whose searched values are committed, and the ranking is
re-measured at the new point. Per-dimension scores accumulate across
iterations and decide the final top-K entries; every other dimension is
clipped back to the anomaly's value.

``update_mode="accumulate"`` (default) runs the relaxed optimization as one
continuous trajectory (learning rate decaying per outer iteration, best
iterate retained), attributes greedily at committed points, and finally
re-optimizes only the selected dimensions with the rest pinned.
``update_mode="replace"`` is the strict per-iteration variant that resets
every non-selected dimension to the anomaly after each step; it is kept as
a configuration switch but converges poorly when several dimensions must
move far (Adam's per-coordinate normalization makes the repeated resets
destructive).

Any detector exposing ``threshold``, ``score(x)``, ``errors(rows)`` and
``error_value_and_grad(x)`` can be interpreted: the tabular autoencoder,
the embedding-space detector of the graph path, and the prediction-loss
wrapper of the multivariate path all qualify.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datahub import arr, register_artifact, unarr
from .errors import DataFormatError, NotAnomalyError
from .optim import Adam


@dataclass
class TabularInterpConfig:
    lam: float = 0.001
    eps: float | None = None          # None: 0.5 * detector threshold
    alpha: float = 0.5
    max_iter: int = 20
    k: int = 10
    sigma_n: float = 0.0
    bounds: tuple = (0.0, 1.0)
    dims_per_iter: int = 1
    steps_per_iter: int = 8
    early_stop: float | None = None
    update_mode: str = "accumulate"   # or "replace"
    categorical: dict | None = None   # dim -> sorted array of valid codes
    init_margin: float = 0.01         # keeps atanh off the saturated tails
    lr_decay: float = 0.6             # per-outer-iteration Adam lr factor

    def __post_init__(self):
        a, b = self.bounds
        if not (self.lam > 0 and self.alpha > 0):
            raise DataFormatError("lam and alpha must be positive")
        if self.eps is not None and self.eps <= 0:
            raise DataFormatError("eps must be positive (or None for auto)")
        if self.k < 1 or self.max_iter < 1 or self.dims_per_iter < 1:
            raise DataFormatError("k, max_iter and dims_per_iter must be >= 1")
        if self.sigma_n < 0:
            raise DataFormatError("sigma_n must be >= 0")
        if not a < b:
            raise DataFormatError("bounds must satisfy a < b")
        if self.update_mode not in ("accumulate", "replace"):
            raise DataFormatError(f"unknown update_mode {self.update_mode!r}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise DataFormatError("lr_decay must lie in (0, 1]")

    def resolve_eps(self, threshold: float) -> float:
        return self.eps if self.eps is not None else 0.5 * threshold


@dataclass
class InterpretationEntry:
    dim: int
    anomaly_value: float
    reference_value: float
    effectiveness: float


@register_artifact("interpretation")
@dataclass
class Interpretation:
    """Sparse difference between an anomaly and its searched reference."""

    anomaly: np.ndarray
    reference: np.ndarray
    entries: list
    converged: bool
    objective_trace: list = field(default_factory=list)

    @property
    def dims(self) -> list:
        return [e.dim for e in self.entries]

    @property
    def k(self) -> int:
        return len(self.entries)

    def to_doc(self) -> dict:
        return {
            "anomaly": arr(self.anomaly),
            "reference": arr(self.reference),
            "entries": [[e.dim, e.anomaly_value, e.reference_value, e.effectiveness]
                        for e in self.entries],
            "converged": self.converged,
            "objective_trace": [float(v) for v in self.objective_trace],
        }

    @classmethod
    def from_doc(cls, d: dict) -> "Interpretation":
        entries = [InterpretationEntry(int(e[0]), e[1], e[2], e[3])
                   for e in d["entries"]]
        return cls(unarr(d["anomaly"]), unarr(d["reference"]), entries,
                   bool(d["converged"]), list(d["objective_trace"]))


@register_artifact("interpretation_set")
@dataclass
class InterpretationSet:
    items: list
    feature_names: list = field(default_factory=list)

    def to_doc(self) -> dict:
        return {"items": [i.to_doc() for i in self.items],
                "feature_names": self.feature_names}

    @classmethod
    def from_doc(cls, d: dict) -> "InterpretationSet":
        return cls([Interpretation.from_doc(i) for i in d["items"]],
                   list(d.get("feature_names", [])))


# ------------------------------------------------------------------ objective


def objective_dtab(x_star: np.ndarray, x_anom: np.ndarray, detector,
                   config: TabularInterpConfig) -> float:
    """Bounded fidelity term plus weighted L2 stability term (scalar)."""
    x_star = np.asarray(x_star, dtype=np.float64)
    x_anom = np.asarray(x_anom, dtype=np.float64)
    if x_star.shape != x_anom.shape:
        raise DataFormatError("reference and anomaly must share a dimension")
    eps = config.resolve_eps(detector.threshold)
    err = float(detector.errors(x_star[None, :])[0])
    fid = max(err - (detector.threshold - eps), 0.0)
    return fid + config.lam * float(np.linalg.norm(x_star - x_anom))


def _dtab_value_grads(x_star, x_anom, detector, eps, lam):
    """Objective value, its gradient, and the raw error gradient."""
    err, derr = detector.error_value_and_grad(x_star)
    slack = err - (detector.threshold - eps)
    diff = x_star - x_anom
    dist = float(np.linalg.norm(diff))
    val = max(slack, 0.0) + lam * dist
    grad = np.zeros_like(x_star)
    if slack > 0.0:
        grad = grad + derr
    if dist > 0.0:
        grad = grad + lam * diff / dist
    return val, grad, derr


def select_effective_dims(grad: np.ndarray, x_star: np.ndarray, count: int) -> np.ndarray:
    """Indices of the ``count`` largest gradient-times-input products,
    descending, ties broken toward the lowest dimension index."""
    grad = np.asarray(grad, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if grad.shape != x_star.shape:
        raise DataFormatError("gradient and input must share a dimension")
    products = grad * x_star
    order = np.lexsort((np.arange(products.size), -products))
    return order[:count]


def _rank_all(values: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(values.size), -values))


def _to_u(x, a, b):
    return np.arctanh((2.0 * x - (a + b)) / (b - a))


def _to_x(u, a, b):
    return (b - a) / 2.0 * np.tanh(u) + (b + a) / 2.0


# ---------------------------------------------------------------- interpreter


def interpret_tabular(x_anom, detector, config: TabularInterpConfig,
                      seed: int | None = None) -> Interpretation:
    """Search a normal reference for a detector-flagged anomaly.

    Deterministic when ``config.sigma_n == 0``; otherwise the search starts
    from the anomaly's Gaussian neighborhood drawn with ``seed``.
    Non-convergence (no normal reference found) is flagged, never raised.
    """
    x_anom = np.asarray(x_anom, dtype=np.float64).copy()
    n = x_anom.shape[0]
    if config.k > n:
        raise DataFormatError(f"k={config.k} exceeds dimensionality {n}")
    _, flagged = detector.score(x_anom)
    if not flagged:
        raise NotAnomalyError("input scores normal; not an anomaly")

    a, b = config.bounds
    eps = config.resolve_eps(detector.threshold)
    margin = config.init_margin * (b - a)
    start = x_anom.copy()
    if config.sigma_n > 0.0:
        rng = np.random.default_rng(seed)
        start = start + rng.normal(0.0, config.sigma_n, size=n)
    start = np.clip(start, a + margin, b - margin)

    if config.update_mode == "replace":
        solution, importance, recorded, trace = _solve_replace(
            x_anom, start, detector, config, eps)
    else:
        solution, trace = _solve_continuous(x_anom, start, detector, config, eps)
        importance, recorded = _attribute(x_anom, solution, detector, config, eps)
        recorded = _polish(x_anom, recorded, detector, config, eps)

    entries = _assemble_entries(x_anom, importance, recorded, config)
    reference = x_anom.copy()
    for e in entries:
        reference[e.dim] = e.reference_value
    converged = not detector.score(reference)[1]
    return Interpretation(x_anom, reference, entries, converged, trace)


def _solve_continuous(x_anom, start, detector, config, eps):
    """One persistent-Adam trajectory on the reparameterized variable.

    Returns the best iterate by objective value: momentum can overshoot a
    narrow normal band into the saturated tails of the tanh map, so the
    final point is not necessarily the best visited.
    """
    a, b = config.bounds
    u = _to_u(start, a, b)
    adam = Adam(u.shape, lr=config.alpha)
    trace = []
    best_val, best_x = np.inf, start
    for it in range(config.max_iter):
        adam.lr = config.alpha * config.lr_decay ** it
        for _ in range(config.steps_per_iter):
            x_work = _to_x(u, a, b)
            val, grad, _ = _dtab_value_grads(x_work, x_anom, detector, eps, config.lam)
            if val < best_val:
                best_val, best_x = val, x_work
            u = adam.step(u, grad * (b - a) / 2.0 * (1.0 - np.tanh(u) ** 2))
        x_work = _to_x(u, a, b)
        val, _, _ = _dtab_value_grads(x_work, x_anom, detector, eps, config.lam)
        if val < best_val:
            best_val, best_x = val, x_work
        trace.append(val)
        if (config.early_stop is not None and len(trace) >= 2
                and abs(trace[-2] - trace[-1]) < config.early_stop):
            break
    return best_x, trace


def _attribute(x_anom, solution, detector, config, eps):
    """Greedy effectiveness ranking at committed sparse points.

    The error gradient is the fidelity term's gradient whenever the bounded
    loss is active; using it directly keeps the ranking meaningful after
    the committed point crosses the boundary. A dimension's effectiveness
    is its gradient-times-input score at the round it was selected (its
    marginal contribution at commit time).
    """
    n = x_anom.shape[0]
    committed = x_anom.copy()
    effectiveness = np.zeros(n)
    recorded: dict[int, float] = {}
    rounds = -(-config.k // config.dims_per_iter)   # ceil
    for _ in range(rounds):
        _, derr = detector.error_value_and_grad(committed)
        scores = derr * committed
        fresh = [int(d) for d in _rank_all(scores) if int(d) not in recorded]
        sel = fresh[:config.dims_per_iter]
        if not sel:
            break
        for d in sel:
            effectiveness[d] = scores[d]
            recorded[d] = float(solution[d])
            committed[d] = solution[d]
    return effectiveness, recorded


def _polish(x_anom, recorded, detector, config, eps):
    """Re-optimize the selected dimensions only, everything else pinned at
    the anomaly: the jointly-searched values are a warm start, but the
    K-sparse optimum can differ when dimensions are correlated."""
    if not recorded:
        return recorded
    a, b = config.bounds
    margin = config.init_margin * (b - a)
    dims = np.array(sorted(recorded), dtype=np.int64)
    mask = np.zeros(x_anom.shape[0])
    mask[dims] = 1.0
    start = x_anom.copy()
    for d, v in recorded.items():
        start[d] = v
    u = _to_u(np.clip(start, a + margin, b - margin), a, b)
    adam = Adam(u.shape, lr=config.alpha)
    best_val, best_x = np.inf, start
    for it in range(config.max_iter):
        adam.lr = config.alpha * config.lr_decay ** it
        for _ in range(config.steps_per_iter):
            x_work = _to_x(u, a, b)
            val, grad, _ = _dtab_value_grads(x_work, x_anom, detector, eps, config.lam)
            if val < best_val:
                best_val, best_x = val, x_work
            u = adam.step(u, mask * grad * (b - a) / 2.0 * (1.0 - np.tanh(u) ** 2))
    final = _to_x(u, a, b)
    val, _, _ = _dtab_value_grads(final, x_anom, detector, eps, config.lam)
    if val < best_val:
        best_x = final
    return {int(d): float(best_x[d]) for d in dims}


def _solve_replace(x_anom, start, detector, config, eps):
    """Literal per-iteration variant: Adam steps on the relaxed vector, then
    every non-selected dimension is reset to the anomaly's value."""
    a, b = config.bounds
    margin = config.init_margin * (b - a)
    clip = lambda v: np.clip(v, a + margin, b - margin)  # noqa: E731
    u = _to_u(start, a, b)
    adam = Adam(u.shape, lr=config.alpha)
    committed = x_anom.copy()
    importance = np.zeros(x_anom.shape[0])
    recorded: dict[int, float] = {}
    trace = []
    for _ in range(config.max_iter):
        for _ in range(config.steps_per_iter):
            x_work = _to_x(u, a, b)
            _, grad, _ = _dtab_value_grads(x_work, x_anom, detector, eps, config.lam)
            u = adam.step(u, grad * (b - a) / 2.0 * (1.0 - np.tanh(u) ** 2))
        x_work = _to_x(u, a, b)
        val, grad, _ = _dtab_value_grads(x_work, x_anom, detector, eps, config.lam)
        trace.append(val)
        scores = grad * x_work
        importance += scores
        sel = select_effective_dims(grad, x_work, config.dims_per_iter)
        for d in sel:
            recorded[int(d)] = float(x_work[d])
        committed = x_anom.copy()
        committed[sel] = x_work[sel]
        u = _to_u(clip(committed), a, b)
        if (config.early_stop is not None and len(trace) >= 2
                and abs(trace[-2] - trace[-1]) < config.early_stop):
            break
    return committed, importance, recorded, trace


def _assemble_entries(x_anom, importance, recorded, config):
    cats = config.categorical or {}
    ranked = sorted(recorded, key=lambda d: (-importance[d], d))
    entries = []
    for d in ranked:
        value = recorded[d]
        if d in cats:
            codes = np.asarray(cats[d], dtype=np.float64)
            value = float(codes[np.argmin(np.abs(codes - value))])
        if value == x_anom[d]:
            continue
        entries.append(InterpretationEntry(d, float(x_anom[d]), value,
                                           float(importance[d])))
        if len(entries) == config.k:
            break
    return entries
