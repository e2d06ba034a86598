"""Link-anomaly detector for unattributed graphs.

Nodes are embedded by skip-gram with negative sampling over truncated
random walks; a link embeds as the concatenation of its endpoint vectors,
and a downstream reconstruction detector over the (normalized) link
embeddings supplies the anomaly threshold. The embedding lookup is marked
indifferentiable by default; an affine-over-one-hot equivalent is exposed
for the gradient-based interpretation branch.
"""

from __future__ import annotations

import warnings

import numpy as np

from .. import kernels
from ..datahub import arr, fit_normalization, register_artifact, unarr
from ..errors import DataFormatError
from .reconstruction import ReconstructionDetector, train_reconstruction


@register_artifact("graph_detector")
class GraphDetector:
    def __init__(self, node_names: list, edges: list, embeddings: np.ndarray,
                 recon: ReconstructionDetector, differentiable: bool = False,
                 params: dict | None = None):
        self.node_names = list(node_names)
        self.node_ids = {n: i for i, n in enumerate(self.node_names)}
        self.edges = [tuple(e) for e in edges]
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        if self.embeddings.shape[0] != len(self.node_names):
            raise DataFormatError("one embedding row per node is required")
        self.recon = recon
        self.differentiable = bool(differentiable)
        self.params = params or {}
        self.adjacency: dict[int, list] = {i: [] for i in range(len(self.node_names))}
        for a, b in self.edges:
            ia, ib = self._nid(a), self._nid(b)
            if ib not in self.adjacency[ia]:
                self.adjacency[ia].append(ib)
            if ia not in self.adjacency[ib]:
                self.adjacency[ib].append(ia)
        for v in self.adjacency.values():
            v.sort()

    # ------------------------------------------------------------------ api

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def threshold(self) -> float:
        return self.recon.threshold

    def _nid(self, node) -> int:
        if isinstance(node, (int, np.integer)):
            if not 0 <= int(node) < len(self.node_names):
                raise DataFormatError(f"unknown node id {node}")
            return int(node)
        if node not in self.node_ids:
            raise DataFormatError(f"unknown node {node!r}")
        return self.node_ids[node]

    def neighbors(self, node) -> list:
        return list(self.adjacency[self._nid(node)])

    def embed_link(self, a, b) -> np.ndarray:
        """Raw link embedding: concat(emb(a), emb(b)), length 2d."""
        return np.concatenate([self.embeddings[self._nid(a)],
                               self.embeddings[self._nid(b)]])

    def embed_link_normalized(self, a, b) -> np.ndarray:
        return self.recon.norm.apply(self.embed_link(a, b))

    def score_link(self, a, b) -> tuple[float, bool]:
        e = self.embed_link_normalized(a, b)
        return self.recon.score(e)

    def is_anomalous_link(self, a, b) -> bool:
        return self.score_link(a, b)[1]

    # ----------------------------------------------------------- persistence

    def to_doc(self) -> dict:
        return {
            "node_names": self.node_names,
            "edges": [[a, b] for a, b in self.edges],
            "embeddings": arr(self.embeddings),
            "recon": self.recon.to_doc(),
            "differentiable": self.differentiable,
            "params": self.params,
        }

    @classmethod
    def from_doc(cls, d: dict) -> "GraphDetector":
        return cls(d["node_names"], [tuple(e) for e in d["edges"]],
                   unarr(d["embeddings"]),
                   ReconstructionDetector.from_doc(d["recon"]),
                   bool(d["differentiable"]), dict(d["params"]))


def _random_walks(adjacency: dict, n_nodes: int, walk_length: int,
                  walks_per_node: int, rng) -> tuple[np.ndarray, np.ndarray]:
    n_walks = walks_per_node * n_nodes
    walks = np.full((n_walks, walk_length), -1, dtype=np.int64)
    lens = np.zeros(n_walks, dtype=np.int64)
    w = 0
    for _ in range(walks_per_node):
        for start in rng.permutation(n_nodes):
            cur = int(start)
            walks[w, 0] = cur
            ln = 1
            while ln < walk_length:
                nbrs = adjacency[cur]
                if not nbrs:
                    break
                cur = nbrs[int(rng.integers(0, len(nbrs)))]
                walks[w, ln] = cur
                ln += 1
            lens[w] = ln
            w += 1
    return walks, lens


def train_graph_embedding(edges: list, d: int, walk_length: int,
                          walks_per_node: int, window: int, epochs: int,
                          seed: int, nodes: list | None = None,
                          negatives: int = 5, lr: float = 0.025,
                          recon_layers: list | None = None,
                          recon_epochs: int = 60,
                          recon_quantile: float = 0.995) -> GraphDetector:
    """DeepWalk-style embedding plus a reconstruction detector on link
    embeddings of every training edge (both orientations)."""
    names = sorted({n for e in edges for n in e} | set(nodes or []))
    if len(names) < 2:
        raise DataFormatError("need at least 2 nodes")
    ids = {n: i for i, n in enumerate(names)}
    adjacency: dict[int, list] = {i: [] for i in range(len(names))}
    for a, b in edges:
        ia, ib = ids[a], ids[b]
        if ib not in adjacency[ia]:
            adjacency[ia].append(ib)
        if ia not in adjacency[ib]:
            adjacency[ib].append(ia)
    for v in adjacency.values():
        v.sort()
    isolated = [names[i] for i, v in adjacency.items() if not v]
    if isolated:
        warnings.warn(
            f"{len(isolated)} node(s) without edges embedded from self-walks only",
            stacklevel=2,
        )

    rng = np.random.default_rng(seed)
    n = len(names)
    emb_in = (rng.random((n, d)) - 0.5) / d
    emb_out = np.zeros((n, d))

    deg = np.array([max(len(adjacency[i]), 1) for i in range(n)], dtype=np.float64)
    neg_p = deg ** 0.75
    neg_p /= neg_p.sum()

    for _ in range(int(epochs)):
        walks, lens = _random_walks(adjacency, n, walk_length, walks_per_node, rng)
        n_pairs = kernels.count_pairs(lens, window)
        negs = rng.choice(n, size=(max(n_pairs, 1), negatives), p=neg_p).astype(np.int64)
        used = kernels.sgns_train(walks, lens, window, emb_in, emb_out, lr, negs)
        if used != n_pairs:
            raise AssertionError(f"pair enumeration drift: {used} != {n_pairs}")

    link_rows = []
    for a, b in edges:
        ia, ib = ids[a], ids[b]
        link_rows.append(np.concatenate([emb_in[ia], emb_in[ib]]))
        link_rows.append(np.concatenate([emb_in[ib], emb_in[ia]]))
    link_rows = np.asarray(link_rows)
    if len(link_rows) < 100:
        link_rows = np.tile(link_rows, (-(-100 // len(link_rows)), 1))
    norm = fit_normalization(link_rows)
    layers = recon_layers if recon_layers is not None else [d, max(2, d // 4), d]
    recon = train_reconstruction(norm.apply(link_rows), layers, recon_epochs,
                                 seed=seed + 1, quantile=recon_quantile, norm=norm)
    params = {"d": d, "walk_length": walk_length, "walks_per_node": walks_per_node,
              "window": window, "epochs": epochs, "negatives": negatives,
              "lr": lr, "seed": seed}
    return GraphDetector(names, [tuple(e) for e in edges], emb_in, recon,
                         differentiable=False, params=params)
