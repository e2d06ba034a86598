import numpy as np
import pytest

from deepaid.datahub import save_artifact, load_artifact
from deepaid.detectors import (ReconstructionDetector, train_graph_embedding,
                               train_reconstruction, train_sequence_predictor)
from deepaid.errors import DataFormatError


def corner_cluster(n=200, dims=6, seed=0):
    rng = np.random.default_rng(seed)
    return np.clip(np.abs(rng.normal(0.0, 0.05, size=(n, dims))), 0, 1)


def test_corner_cluster_scores():
    rows = corner_cluster()
    det = train_reconstruction(rows, [4], epochs=150, seed=3)
    err0, flag0 = det.score(np.zeros(6))
    assert not flag0                       # training point is normal
    err1, flag1 = det.score(np.ones(6))
    assert flag1 and err1 > err0           # far corner is anomalous


def test_training_determinism():
    rows = corner_cluster()
    d1 = train_reconstruction(rows, [4], epochs=30, seed=9)
    d2 = train_reconstruction(rows, [4], epochs=30, seed=9)
    assert d1.threshold == d2.threshold
    assert all(np.array_equal(a, b) for a, b in zip(d1.weights, d2.weights))


def test_quantile_monotone_threshold():
    rows = corner_cluster()
    lo = train_reconstruction(rows, [4], epochs=30, seed=9, quantile=0.90)
    hi = train_reconstruction(rows, [4], epochs=30, seed=9, quantile=0.999)
    assert hi.threshold >= lo.threshold


def test_rejects_degenerate_training_data():
    with pytest.raises(DataFormatError, match="variance"):
        train_reconstruction(np.full((150, 4), 0.5), [2], epochs=1, seed=0)
    with pytest.raises(DataFormatError, match="100"):
        train_reconstruction(np.random.default_rng(0).random((40, 4)), [2],
                             epochs=1, seed=0)


def constant_detector(n=4, c=0.5, threshold=0.01):
    """Autoencoder that reconstructs everything to the constant c."""
    w = [np.zeros((n, n))]
    b = [np.full(n, c)]
    return ReconstructionDetector(w, b, [0], threshold, 0.995)


def test_boundary_error_counts_as_anomalous():
    det = constant_detector(n=1, c=0.0, threshold=0.04)
    # error of x=[0.2] against constant 0 reconstruction is exactly 0.04
    err, flag = det.score(np.array([0.2]))
    assert err == pytest.approx(0.04, abs=1e-12)
    assert flag


def test_identity_autoencoder_scores_zero():
    n = 3
    det = ReconstructionDetector([np.eye(n)], [np.zeros(n)], [0], 0.1, 0.995)
    err, flag = det.score(np.array([0.2, 0.8, 0.5]))
    assert err == 0.0 and not flag


def test_dimension_mismatch_rejected():
    det = constant_detector()
    with pytest.raises(DataFormatError, match="dimension"):
        det.score(np.zeros(7))


def test_out_of_bounds_clamped_with_warning():
    det = constant_detector()
    with pytest.warns(UserWarning, match="clamped"):
        det.score(np.array([1.5, 0.5, 0.5, 0.5]))


def test_detector_roundtrip_bit_exact():
    rows = corner_cluster()
    det = train_reconstruction(rows, [4], epochs=20, seed=5)
    text = save_artifact(det)
    clone = load_artifact(text)
    assert save_artifact(clone) == text
    x = np.full(6, 0.3)
    assert det.score(x) == clone.score(x)


# ------------------------------------------------------------------ sequences


def test_cyclic_corpus_prediction():
    seqs = [np.array([1, 2, 3] * 12)] * 30
    pred = train_sequence_predictor(seqs, n_keys=4, window=3, epochs=40,
                                    seed=0, hidden=12)
    dist = pred.predict_next(np.array([1, 2]))
    assert dist[3] > 0.9
    assert dist.sum() == pytest.approx(1.0, abs=1e-9)


def test_repeated_key_corpus_top1():
    seqs = [np.array([2] * 24)] * 20
    pred = train_sequence_predictor(seqs, n_keys=4, window=3, epochs=30,
                                    seed=0, hidden=8)
    dist = pred.predict_next(np.array([2, 2]))
    assert int(np.argmax(dist)) == 2


def test_distribution_valid_for_every_prefix(seq_predictor, rng):
    for _ in range(10):
        prefix = rng.integers(0, seq_predictor.n_keys,
                              size=seq_predictor.prefix_len)
        dist = seq_predictor.predict_next(prefix)
        assert dist.min() >= 0
        assert dist.sum() == pytest.approx(1.0, abs=1e-9)


def test_out_of_alphabet_rejected(seq_predictor):
    bad = np.zeros(seq_predictor.window, dtype=np.int64)
    bad[0] = seq_predictor.n_keys + 3
    with pytest.raises(DataFormatError, match="alphabet"):
        seq_predictor.score_window(bad)
    with pytest.raises(DataFormatError):
        train_sequence_predictor([np.array([0, 1, 99])], n_keys=4, window=3,
                                 epochs=1, seed=0)


def test_sequence_predictor_roundtrip(seq_predictor, seq_bench):
    text = save_artifact(seq_predictor)
    clone = load_artifact(text)
    w = seq_bench.final_corrupted[0]
    assert clone.score_window(w) == seq_predictor.score_window(w)


# ---------------------------------------------------------------------- graph


def test_embed_link_is_concat(graph_detector):
    a, b = graph_detector.node_names[0], graph_detector.node_names[1]
    e = graph_detector.embed_link(a, b)
    ia, ib = graph_detector.node_ids[a], graph_detector.node_ids[b]
    assert e.shape == (2 * graph_detector.dim,)
    assert np.array_equal(e[:graph_detector.dim], graph_detector.embeddings[ia])
    assert np.array_equal(e[graph_detector.dim:], graph_detector.embeddings[ib])


def test_community_cosine_separation(graph_detector, graph_bench):
    emb = graph_detector.embeddings
    comm = graph_bench.communities
    names = graph_detector.node_names

    def cos(i, j):
        u, v = emb[i], emb[j]
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v) + 1e-12))

    intra, inter = [], []
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            (intra if comm[names[i]] == comm[names[j]] else inter).append(cos(i, j))
    assert np.mean(intra) > np.mean(inter)


def test_planted_links_flagged(graph_detector, graph_bench):
    rate = np.mean([graph_detector.is_anomalous_link(a, b)
                    for a, b in graph_bench.anomalous_links])
    assert rate >= 0.8


def test_isolated_node_warns():
    edges = [("a", "b"), ("b", "c"), ("a", "c")]
    with pytest.warns(UserWarning, match="self-walks"):
        train_graph_embedding(edges, d=2, walk_length=4, walks_per_node=2,
                              window=1, epochs=1, seed=0, nodes=["a", "b", "c", "zzz"],
                              recon_epochs=5)


def test_graph_detector_roundtrip(graph_detector, graph_bench):
    text = save_artifact(graph_detector)
    clone = load_artifact(text)
    a, b = graph_bench.anomalous_links[0]
    assert clone.score_link(a, b) == graph_detector.score_link(a, b)
    assert clone.adjacency == graph_detector.adjacency
