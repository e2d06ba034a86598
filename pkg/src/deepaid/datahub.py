"""Data ingestion, normalization, synthetic benchmarks and persistence.

File formats
------------
tabular    CSV with a header row of feature names, one sample per row
sequences  plain text, one sequence of space-separated integer keys per line
graph      TSV edge list, two node-name columns (optional weight ignored)
artifacts  canonical JSON documents carrying ``"deepaid_schema": 1``

Artifacts serialize with sorted keys and no whitespace so byte-identity
round-trips are meaningful; all synthetic generators are pure functions of
their seed and parameters.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, SchemaMismatchError

SCHEMA_VERSION = 1

_KINDS: dict[str, type] = {}


def register_artifact(kind: str):
    def deco(cls):
        cls.artifact_kind = kind
        _KINDS[kind] = cls
        return cls
    return deco


def _ensure_registry_loaded() -> None:
    # registration happens at import; pull in every module that persists
    from . import detectors, distiller, interp_tabular  # noqa: F401
    from . import interp_timeseries, interp_graph, evalkit  # noqa: F401


def save_artifact(obj) -> str:
    """Serialize a registered object to its canonical document text."""
    kind = getattr(obj, "artifact_kind", None)
    if kind is None:
        raise DataFormatError(f"{type(obj).__name__} is not a persistable artifact")
    doc = {"deepaid_schema": SCHEMA_VERSION, "kind": kind, "body": obj.to_doc()}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def load_artifact(text: str):
    _ensure_registry_loaded()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"document is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "deepaid_schema" not in doc:
        raise DataFormatError("document lacks the deepaid_schema field")
    if doc["deepaid_schema"] != SCHEMA_VERSION:
        raise SchemaMismatchError(doc["deepaid_schema"], SCHEMA_VERSION)
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise DataFormatError(f"unknown artifact kind {kind!r}")
    return _KINDS[kind].from_doc(doc["body"])


def save_artifact_file(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(save_artifact(obj))


def load_artifact_file(path):
    with open(path, encoding="utf-8") as fh:
        return load_artifact(fh.read())


def arr(x) -> list:
    """ndarray -> nested lists for JSON (floats keep full precision)."""
    return np.asarray(x).tolist()


def unarr(x, dtype=np.float64) -> np.ndarray:
    return np.asarray(x, dtype=dtype)


# ---------------------------------------------------------------- normalization


@register_artifact("normalization_spec")
@dataclass
class NormalizationSpec:
    """Per-dimension min-max scaling to [0, 1] with a clamp policy."""

    mins: np.ndarray
    maxs: np.ndarray
    clamp: bool = True

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if np.any(self.maxs <= self.mins):
            raise DataFormatError("normalization requires min < max per dimension")

    @property
    def n_dims(self) -> int:
        return self.mins.shape[0]

    def apply(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        z = (rows - self.mins) / (self.maxs - self.mins)
        if self.clamp:
            out_of_range = (z < 0.0) | (z > 1.0)
            if np.any(out_of_range):
                warnings.warn(
                    f"{int(np.count_nonzero(out_of_range))} values outside the "
                    "normalization bounds were clamped",
                    stacklevel=2,
                )
            z = np.clip(z, 0.0, 1.0)
        return z

    def invert(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return z * (self.maxs - self.mins) + self.mins

    def to_doc(self) -> dict:
        return {"mins": arr(self.mins), "maxs": arr(self.maxs), "clamp": self.clamp}

    @classmethod
    def from_doc(cls, d: dict) -> "NormalizationSpec":
        return cls(unarr(d["mins"]), unarr(d["maxs"]), bool(d["clamp"]))


def fit_normalization(rows: np.ndarray, clamp: bool = True) -> NormalizationSpec:
    rows = np.asarray(rows, dtype=np.float64)
    mins = rows.min(axis=0)
    maxs = rows.max(axis=0)
    flat = maxs <= mins
    if np.any(flat):
        warnings.warn(
            f"{int(np.count_nonzero(flat))} constant dimensions widened to unit range",
            stacklevel=2,
        )
        mins = np.where(flat, mins - 0.5, mins)
        maxs = np.where(flat, maxs + 0.5, maxs)
    return NormalizationSpec(mins, maxs, clamp)


def identity_normalization(n_dims: int) -> NormalizationSpec:
    return NormalizationSpec(np.zeros(n_dims), np.ones(n_dims))


# --------------------------------------------------------------------- loaders


def load_tabular(path) -> tuple[list, np.ndarray, NormalizationSpec]:
    """Read a feature CSV; returns (feature names, raw rows, fitted spec)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DataFormatError(f"{path}: empty tabular file")
    names = [c.strip() for c in lines[0].split(",")]
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != len(names):
            raise DataFormatError(
                f"{path}:{lineno}: expected {len(names)} cells, got {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: non-numeric cell ({e})") from e
    data = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise DataFormatError(f"{path}: non-finite values present")
    return names, data, fit_normalization(data)


def save_tabular(path, names: list, rows: np.ndarray) -> None:
    rows = np.asarray(rows, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_sequences(path) -> list:
    """Read one integer-key sequence per line."""
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, ln in enumerate(fh, start=1):
            if not ln.strip():
                continue
            try:
                keys = [int(tok) for tok in ln.split()]
            except ValueError as e:
                raise DataFormatError(f"{path}:{lineno}: non-integer key ({e})") from e
            if any(k < 0 for k in keys):
                raise DataFormatError(f"{path}:{lineno}: negative key")
            seqs.append(np.asarray(keys, dtype=np.int64))
    if not seqs:
        raise DataFormatError(f"{path}: empty sequence file")
    return seqs


def save_sequences(path, seqs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in seqs:
            fh.write(" ".join(str(int(k)) for k in s) + "\n")


def load_graph(path) -> list:
    """Read a TSV edge list; returns [(a, b), ...] with string node names."""
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, ln in enumerate(fh, start=1):
            if not ln.strip():
                continue
            cols = ln.rstrip("\n").split("\t")
            if len(cols) < 2:
                raise DataFormatError(f"{path}:{lineno}: expected two node columns")
            edges.append((cols[0], cols[1]))
    if not edges:
        raise DataFormatError(f"{path}: empty edge list")
    return edges


def save_graph(path, edges) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in edges:
            fh.write(f"{a}\t{b}\n")


# ---------------------------------------------------------- tabular benchmark


@register_artifact("tabular_benchmark")
@dataclass
class SyntheticBenchmark:
    """Gaussian-cluster normal data plus sparse mean-shift anomaly classes.

    Each anomaly class shifts a known dimension set, so interpreter
    dimension recovery can be scored against ground truth.
    """

    feature_names: list
    normal_rows: np.ndarray
    anomalies: dict            # class name -> rows
    shifted_dims: dict         # class name -> sorted dim indices
    seed: int
    params: dict = field(default_factory=dict)

    def all_anomaly_rows(self) -> np.ndarray:
        return np.concatenate([self.anomalies[c] for c in sorted(self.anomalies)])

    def to_doc(self) -> dict:
        return {
            "feature_names": self.feature_names,
            "normal_rows": arr(self.normal_rows),
            "anomalies": {c: arr(v) for c, v in self.anomalies.items()},
            "shifted_dims": {c: list(map(int, v)) for c, v in self.shifted_dims.items()},
            "seed": self.seed,
            "params": self.params,
        }

    @classmethod
    def from_doc(cls, d: dict) -> "SyntheticBenchmark":
        return cls(
            list(d["feature_names"]),
            unarr(d["normal_rows"]),
            {c: unarr(v) for c, v in d["anomalies"].items()},
            {c: list(map(int, v)) for c, v in d["shifted_dims"].items()},
            int(d["seed"]),
            dict(d["params"]),
        )


def synth_tabular(seed: int, n_dims: int, n_normal: int, classes: int,
                  anomalies_per_class: int = 100, clusters: int = 3,
                  noise: float = 0.06, shifted_per_class: int = 10,
                  shift_lo: float = 0.30, shift_hi: float = 0.45) -> SyntheticBenchmark:
    if n_dims < 4 or classes < 1:
        raise DataFormatError("synth_tabular needs n_dims >= 4 and classes >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.3, 0.7, size=(clusters, n_dims))

    def draw(n):
        which = rng.integers(0, clusters, size=n)
        pts = centers[which] + rng.normal(0.0, noise, size=(n, n_dims))
        return np.clip(pts, 0.0, 1.0)

    normal_rows = draw(n_normal)
    anomalies = {}
    shifted = {}
    # upward shifts on low-mean dims: keeps the planted pattern inside [0,1]
    # and aligned with the signed gradient-times-input selection rule
    mean_center = centers.mean(axis=0)
    candidates = np.argsort(mean_center)[: max(shifted_per_class * classes,
                                               n_dims * 3 // 4)]
    for c in range(classes):
        dims = np.sort(rng.choice(candidates, size=shifted_per_class, replace=False))
        mags = rng.uniform(shift_lo, shift_hi, size=shifted_per_class)
        rows = draw(anomalies_per_class)
        rows[:, dims] = np.clip(rows[:, dims] + mags, 0.0, 1.0)
        anomalies[f"class{c}"] = rows
        shifted[f"class{c}"] = [int(d) for d in dims]
    names = [f"f{i}" for i in range(n_dims)]
    params = {
        "n_dims": n_dims, "n_normal": n_normal, "classes": classes,
        "anomalies_per_class": anomalies_per_class, "clusters": clusters,
        "noise": noise, "shifted_per_class": shifted_per_class,
        "shift_lo": shift_lo, "shift_hi": shift_hi,
    }
    return SyntheticBenchmark(names, normal_rows, anomalies, shifted, seed, params)


def synth_fp_cluster(seed: int, benchmark: SyntheticBenchmark, n_rows: int = 60,
                     n_dims_shifted: int = 4, shift: float = 0.12) -> np.ndarray:
    """Near-duplicate borderline rows: one fixed small-shift pattern.

    Intended to sit just above a detector threshold (callers filter by the
    actual detector), forming a cluster of look-alike false positives.
    """
    rng = np.random.default_rng(seed)
    n = benchmark.normal_rows.shape[1]
    dims = np.sort(rng.choice(n, size=n_dims_shifted, replace=False))
    base = benchmark.normal_rows[rng.integers(0, len(benchmark.normal_rows))]
    rows = np.tile(base, (n_rows, 1)) + rng.normal(0.0, 0.002, size=(n_rows, n))
    signs = np.where(base[dims] < 0.5, 1.0, -1.0)
    # strongly separated magnitudes keep the effectiveness order stable
    # across the near-duplicates, so their rule state sequences coincide
    grades = np.geomspace(0.4, 2.4, n_dims_shifted)
    rows[:, dims] = rows[:, dims] + signs * shift * grades
    return np.clip(rows, 0.0, 1.0)


# --------------------------------------------------------- sequence benchmark


@register_artifact("sequence_benchmark")
@dataclass
class SequenceBenchmark:
    """Order-2 additive-chain sequences with planted corruptions.

    The chain is next = (prev + prev2 + r) mod n_chain with a one-bit
    random innovation r: each clean transition has two legitimate
    continuations (probability ~ 0.5 each), and no position is recoverable
    from earlier context, so corrupting a late prefix key genuinely breaks
    the final-step prediction. The alphabet reserves the two highest keys
    as "alien": they never occur inside generated sequences, so final-key
    corruptions are globally improbable continuations. Prefix corruptions
    hit one of the last two prefix positions (an order-2 predictor cannot
    be disturbed at the final step by earlier positions) and keep the
    original final key; the replacement differs from the original by at
    least 2 (mod n_chain) so the corrupted continuation sets never overlap
    the true ones.
    """

    n_keys: int
    window: int
    train_sequences: list
    final_corrupted: np.ndarray    # (n, t) windows, alien final key
    prefix_corrupted: np.ndarray   # (n, t) windows, corrupted prefix position
    prefix_positions: np.ndarray   # which prefix index was corrupted
    seed: int
    params: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "n_keys": self.n_keys,
            "window": self.window,
            "train_sequences": [list(map(int, s)) for s in self.train_sequences],
            "final_corrupted": arr(self.final_corrupted),
            "prefix_corrupted": arr(self.prefix_corrupted),
            "prefix_positions": arr(self.prefix_positions),
            "seed": self.seed,
            "params": self.params,
        }

    @classmethod
    def from_doc(cls, d: dict) -> "SequenceBenchmark":
        return cls(
            int(d["n_keys"]), int(d["window"]),
            [np.asarray(s, dtype=np.int64) for s in d["train_sequences"]],
            unarr(d["final_corrupted"], np.int64),
            unarr(d["prefix_corrupted"], np.int64),
            unarr(d["prefix_positions"], np.int64),
            int(d["seed"]), dict(d["params"]),
        )


def _chain_step(a: int, b: int, n_chain: int, rng, noise: float) -> int:
    nxt = (a + b + int(rng.integers(0, 2))) % n_chain
    if noise > 0.0 and rng.random() < noise:
        nxt = int(rng.integers(0, n_chain))
    return nxt


def synth_sequences(seed: int, n_keys: int = 14, window: int = 8,
                    n_train: int = 150, train_len: int = 30,
                    n_corrupted: int = 250, noise: float = 0.0) -> SequenceBenchmark:
    if n_keys < 6 or window < 4:
        raise DataFormatError("synth_sequences needs n_keys >= 6 and window >= 4")
    rng = np.random.default_rng(seed)
    n_chain = n_keys - 2
    aliens = (n_keys - 2, n_keys - 1)

    def gen_seq(length):
        s = [int(rng.integers(0, n_chain)), int(rng.integers(0, n_chain))]
        while len(s) < length:
            s.append(_chain_step(s[-2], s[-1], n_chain, rng, noise))
        return np.asarray(s, dtype=np.int64)

    train = [gen_seq(train_len) for _ in range(n_train)]

    def clean_window():
        return gen_seq(window)

    finals = np.empty((n_corrupted, window), dtype=np.int64)
    for i in range(n_corrupted):
        w = clean_window()
        w[window - 1] = aliens[int(rng.integers(0, 2))]
        finals[i] = w

    prefixes = np.empty((n_corrupted, window), dtype=np.int64)
    positions = np.empty(n_corrupted, dtype=np.int64)
    for i in range(n_corrupted):
        w = clean_window()
        j = window - 2 - int(rng.integers(0, 2))   # one of last two prefix slots
        orig = int(w[j])
        repl = int(rng.integers(0, n_chain))
        while min((repl - orig) % n_chain, (orig - repl) % n_chain) <= 1:
            repl = int(rng.integers(0, n_chain))
        w[j] = repl
        prefixes[i] = w
        positions[i] = j
    params = {"n_train": n_train, "train_len": train_len,
              "n_corrupted": n_corrupted, "noise": noise}
    return SequenceBenchmark(n_keys, window, train, finals, prefixes,
                             positions, seed, params)


# ------------------------------------------------------------ graph benchmark


@register_artifact("graph_benchmark")
@dataclass
class GraphBenchmark:
    """Planted-partition graph with held-out cross-community anomaly links."""

    edges: list                 # [(name_a, name_b)]
    communities: dict           # node name -> community index
    anomalous_links: list       # [(name_a, name_b)] cross-community non-edges
    seed: int
    params: dict = field(default_factory=dict)

    @property
    def nodes(self) -> list:
        return sorted(self.communities)

    def to_doc(self) -> dict:
        return {
            "edges": [[a, b] for a, b in self.edges],
            "communities": self.communities,
            "anomalous_links": [[a, b] for a, b in self.anomalous_links],
            "seed": self.seed,
            "params": self.params,
        }

    @classmethod
    def from_doc(cls, d: dict) -> "GraphBenchmark":
        return cls(
            [tuple(e) for e in d["edges"]],
            {k: int(v) for k, v in d["communities"].items()},
            [tuple(e) for e in d["anomalous_links"]],
            int(d["seed"]), dict(d["params"]),
        )


def synth_graph(seed: int, communities: int = 2, nodes: int = 30,
                intra_p: float = 0.65, inter_p: float = 0.0,
                n_anomalous: int = 10) -> GraphBenchmark:
    if communities < 2 or nodes < 2 * communities:
        raise DataFormatError("synth_graph needs >= 2 communities and enough nodes")
    rng = np.random.default_rng(seed)
    names = [f"n{i}" for i in range(nodes)]
    comm = {names[i]: i % communities for i in range(nodes)}
    members: dict[int, list] = {}
    for name, c in comm.items():
        members.setdefault(c, []).append(name)

    edges = set()
    # ring inside each community guarantees connectivity of the community
    for c, mem in members.items():
        for i in range(len(mem)):
            edges.add(tuple(sorted((mem[i], mem[(i + 1) % len(mem)]))))
    for i in range(nodes):
        for j in range(i + 1, nodes):
            a, b = names[i], names[j]
            p = intra_p if comm[a] == comm[b] else inter_p
            if rng.random() < p:
                edges.add((a, b))
    # one cross edge keeps the whole graph connected even at inter_p ~ 0
    edges.add(tuple(sorted((members[0][0], members[1][0]))))

    cross_non_edges = [
        (names[i], names[j])
        for i in range(nodes) for j in range(i + 1, nodes)
        if comm[names[i]] != comm[names[j]]
        and tuple(sorted((names[i], names[j]))) not in edges
    ]
    if len(cross_non_edges) < n_anomalous:
        raise DataFormatError("graph too dense to plant anomalous links")
    pick = rng.choice(len(cross_non_edges), size=n_anomalous, replace=False)
    anomalous = [cross_non_edges[i] for i in sorted(pick)]
    params = {"communities": communities, "nodes": nodes,
              "intra_p": intra_p, "inter_p": inter_p, "n_anomalous": n_anomalous}
    return GraphBenchmark(sorted(edges), comm, anomalous, seed, params)
