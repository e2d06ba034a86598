"""Two-step interpretation of anomalous graph links.

Step 1 searches a normal reference e* for the link's embedding with the
tabular interpreter against the embedding-space detector. Step 2 recovers
an actual link whose embedding is normal and close to e* by minimizing

    D(X*) = ReLU(error(E(X*)) - (threshold - eps)) + lam * ||E(X*) - e*||_2

either by priority-queue greedy BFS outward from the anomaly's endpoints
(embedding lookup treated as indifferentiable, the default), or by relaxed
one-hot optimization through an affine equivalent of the lookup. All
embedding-space quantities live in the downstream detector's normalized
coordinates.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .datahub import register_artifact
from .detectors.graph import GraphDetector
from .errors import DataFormatError, NotAnomalyError
from .interp_tabular import TabularInterpConfig, interpret_tabular
from .optim import Adam


@dataclass
class GraphInterpConfig:
    lam: float = 0.001
    eps: float | None = None          # None: 0.5 * downstream threshold
    max_iter: int = 10                # BFS pops / gradient outer iterations
    steps_per_iter: int = 8
    alpha: float = 0.5
    tabular: TabularInterpConfig = field(default_factory=TabularInterpConfig)

    def __post_init__(self):
        if self.lam <= 0:
            raise DataFormatError("lam must be positive")
        if self.max_iter < 0:
            raise DataFormatError("max_iter must be >= 0")

    def resolve_eps(self, threshold: float) -> float:
        return self.eps if self.eps is not None else 0.5 * threshold


@register_artifact("link_interpretation")
@dataclass
class LinkInterpretation:
    anomaly: tuple
    reference: tuple
    method: str                   # "greedy" or "gradient"
    objective: float              # D_gra of the reference
    converged: bool               # reference link scores normal
    embedding_reference: np.ndarray
    visited: list = field(default_factory=list)   # popped (a, b, D) triples

    def to_doc(self) -> dict:
        return {
            "anomaly": list(self.anomaly),
            "reference": list(self.reference),
            "method": self.method,
            "objective": self.objective,
            "converged": self.converged,
            "embedding_reference": [float(v) for v in self.embedding_reference],
            "visited": [[a, b, w] for a, b, w in self.visited],
        }

    @classmethod
    def from_doc(cls, d: dict) -> "LinkInterpretation":
        return cls(tuple(d["anomaly"]), tuple(d["reference"]), d["method"],
                   float(d["objective"]), bool(d["converged"]),
                   np.asarray(d["embedding_reference"], dtype=np.float64),
                   [tuple(v) for v in d["visited"]])


def objective_dgra(candidate: tuple, e_star: np.ndarray,
                   detector: GraphDetector, config: GraphInterpConfig) -> float:
    """Priority of a candidate link: bounded normality of its embedding
    plus weighted distance to the step-1 reference."""
    a, b = candidate
    e = detector.embed_link_normalized(a, b)
    err = float(detector.recon.errors(e[None, :])[0])
    eps = config.resolve_eps(detector.threshold)
    f1 = max(err - (detector.threshold - eps), 0.0)
    f2 = float(np.linalg.norm(e - np.asarray(e_star, dtype=np.float64)))
    return f1 + config.lam * f2


def link_objective(candidate: tuple, e_star: np.ndarray,
                   detector: GraphDetector, config: GraphInterpConfig) -> float:
    """Orientation-free objective of an undirected link: the graph is
    undirected and the detector trains on both concat orientations, so a
    candidate link's priority is the better of the two."""
    a, b = candidate
    return min(objective_dgra((a, b), e_star, detector, config),
               objective_dgra((b, a), e_star, detector, config))


def embedding_reference(link: tuple, detector: GraphDetector,
                        config: GraphInterpConfig, seed: int | None = None) -> np.ndarray:
    """Step 1: search a normal embedding-space reference for the link."""
    a, b = link
    e0 = detector.embed_link_normalized(a, b)
    tab = config.tabular
    if tab.k > e0.shape[0]:
        tab = TabularInterpConfig(**{**tab.__dict__, "k": e0.shape[0]})
    interp = interpret_tabular(e0, detector.recon, tab, seed=seed)
    return interp.reference


def interpret_link_greedy(link: tuple, detector: GraphDetector,
                          config: GraphInterpConfig,
                          seed: int | None = None) -> LinkInterpretation:
    """Algorithm: seed the queue with links from both anomaly endpoints to
    their neighbors, repeatedly pop the lowest-objective candidate, update
    the incumbent, expand the far endpoint's unvisited neighbors, and stop
    after max_iter expansions or queue exhaustion. Each node is expanded at
    most once, and the iteration count is the number of neighborhoods
    actually viewed (pops whose far endpoint was already expanded cost
    nothing)."""
    a, b = link
    ia, ib = detector._nid(a), detector._nid(b)
    if not detector.is_anomalous_link(a, b):
        raise NotAnomalyError("link scores normal; not an anomaly")
    e_star = embedding_reference(link, detector, config, seed=seed)

    names = detector.node_names
    available = set(range(len(names)))
    heap: list = []

    def push(x: int, y: int):
        w = link_objective((names[x], names[y]), e_star, detector, config)
        heapq.heappush(heap, (w, x, y))

    for x in (ia, ib):
        for y in detector.adjacency[x]:
            if y in available:
                push(x, y)
        available.discard(x)
    if not heap:
        warnings.warn("both endpoints isolated: greedy search has no seeds",
                      stacklevel=2)

    best_pair = (ia, ib)
    best_w = link_objective(link, e_star, detector, config)
    visited = []
    expansions = 0
    while heap and expansions < config.max_iter:
        w, x, y = heapq.heappop(heap)
        visited.append((names[x], names[y], w))
        if w < best_w:
            best_w, best_pair = w, (x, y)
        if y in available:
            for z in detector.adjacency[y]:
                if z in available and z != y:
                    push(y, z)
            available.discard(y)
            expansions += 1

    ref = (names[best_pair[0]], names[best_pair[1]])
    converged = not detector.is_anomalous_link(*ref)
    return LinkInterpretation((a, b), ref, "greedy", best_w, converged,
                              e_star, visited)


def _build_dgra_graph(detector: GraphDetector, e_star: np.ndarray, eps: float,
                      lam: float):
    """Relaxed objective over two node one-hots with the lookup replaced by
    an equivalent affine map."""
    n = len(detector.node_names)
    d = detector.dim
    g = gc.DiffGraph()
    ha = g.input("ha", (n,))
    hb = g.input("hb", (n,))
    emb_w = g.parameter("emb", detector.embeddings.T)      # (d, n)
    zero_d = g.parameter("zero_d", np.zeros(d))
    ea = g.affine(ha, emb_w, zero_d)
    eb = g.affine(hb, emb_w, zero_d)
    e_raw = g.concat(ea, eb)
    norm = detector.recon.norm
    lo = g.parameter("lo", norm.mins)
    inv = g.parameter("inv", 1.0 / (norm.maxs - norm.mins))
    z = g.mul(g.sub(e_raw, lo), inv)
    h = z
    for l, (w, bias) in enumerate(zip(detector.recon.weights, detector.recon.biases)):
        wid = g.parameter(f"W{l}", w)
        bid = g.parameter(f"b{l}", bias)
        h = g.affine(h, wid, bid)
        code = detector.recon.acts[l]
        if code == 1:
            h = g.tanh(h)
        elif code == 2:
            h = g.relu(h)
        elif code == 3:
            h = g.sigmoid(h)
    err = g.mse(z, h)
    f1 = g.relu(g.add_scalar(err, -(detector.threshold - eps)))
    f2 = g.l2norm(g.sub(z, g.parameter("estar", np.asarray(e_star))))
    g.output(g.add(f1, g.scale(f2, lam)))
    g.freeze()
    return g


def interpret_link_gradient(link: tuple, detector: GraphDetector,
                            config: GraphInterpConfig,
                            seed: int | None = None) -> LinkInterpretation:
    """Relaxed two-one-hot optimization of the link objective; endpoints
    are discretized per-endpoint argmax, and the best discretized pair
    along the trajectory is returned."""
    a, b = link
    ia, ib = detector._nid(a), detector._nid(b)
    if not detector.is_anomalous_link(a, b):
        raise NotAnomalyError("link scores normal; not an anomaly")
    e_star = embedding_reference(link, detector, config, seed=seed)
    eps = config.resolve_eps(detector.threshold)
    graph = _build_dgra_graph(detector, e_star, eps, config.lam)

    n = len(detector.node_names)
    za = np.zeros(n)
    zb = np.zeros(n)
    za[ia] = 2.0
    zb[ib] = 2.0
    adam = Adam((2, n), lr=config.alpha)
    names = detector.node_names

    def soft(z, temp):
        e = np.exp((z - z.max()) / temp)
        return e / e.sum()

    best_pair = (ia, ib)
    best_w = link_objective(link, e_star, detector, config)
    seen = {(ia, ib)}
    rounds = max(config.max_iter, 1)
    for it in range(rounds):
        # anneal toward discrete endpoints so the rounding stays faithful
        temp = max(1.0 * 0.7 ** it, 0.05)
        for _ in range(config.steps_per_iter):
            ha, hb = soft(za, temp), soft(zb, temp)
            _, grads = gc.value_and_grads(graph, {"ha": ha, "hb": hb}, ["ha", "hb"])
            ga, gb = grads["ha"], grads["hb"]
            gza = ha * (ga - float(ga @ ha)) / temp
            gzb = hb * (gb - float(gb @ hb)) / temp
            stacked = adam.step(np.stack([za, zb]), np.stack([gza, gzb]))
            za, zb = stacked[0], stacked[1]
        # evaluate the top-2 mass keys per endpoint jointly
        for xa in np.argsort(-za)[:2]:
            for xb in np.argsort(-zb)[:2]:
                pair = (int(xa), int(xb))
                if pair in seen or pair[0] == pair[1]:
                    continue
                seen.add(pair)
                w = link_objective((names[pair[0]], names[pair[1]]), e_star,
                                   detector, config)
                if w < best_w:
                    best_w, best_pair = w, pair

    ref = (names[best_pair[0]], names[best_pair[1]])
    converged = not detector.is_anomalous_link(*ref)
    return LinkInterpretation((a, b), ref, "gradient", best_w, converged,
                              e_star, [])


def enumerate_links(detector: GraphDetector, e_star: np.ndarray,
                    config: GraphInterpConfig, links_only: bool = True) -> tuple:
    """Exhaustive optimum of the link objective (diagnostic oracle for
    small graphs).

    With ``links_only`` the candidate space is the graph's undirected links
    (the space the greedy search walks), scored orientation-free. Otherwise
    every ordered node pair is scored (the relaxed space of the gradient
    branch).
    """
    names = detector.node_names
    best = (np.inf, None)
    if links_only:
        for x, y in detector.edges:
            w = link_objective((x, y), e_star, detector, config)
            if w < best[0]:
                best = (w, frozenset((x, y)))
        return best
    for i, x in enumerate(names):
        for j, y in enumerate(names):
            if i == j:
                continue
            w = objective_dgra((x, y), e_star, detector, config)
            if w < best[0]:
                best = (w, (x, y))
    return best
