import numpy as np
import pytest

from deepaid.datahub import synth_graph, synth_sequences, synth_tabular
from deepaid.detectors import (train_graph_embedding, train_reconstruction,
                               train_sequence_predictor)


@pytest.fixture(scope="session")
def tab_bench():
    return synth_tabular(seed=7, n_dims=40, n_normal=1500, classes=3,
                         anomalies_per_class=40, shifted_per_class=6)


@pytest.fixture(scope="session")
def tab_detector(tab_bench):
    return train_reconstruction(tab_bench.normal_rows, [24, 6, 24],
                                epochs=50, seed=1)


@pytest.fixture(scope="session")
def seq_bench():
    return synth_sequences(seed=5, n_train=120, n_corrupted=120)


@pytest.fixture(scope="session")
def seq_predictor(seq_bench):
    return train_sequence_predictor(seq_bench.train_sequences, seq_bench.n_keys,
                                    seq_bench.window, epochs=25, seed=2)


@pytest.fixture(scope="session")
def graph_bench():
    return synth_graph(seed=3, communities=2, nodes=30)


@pytest.fixture(scope="session")
def graph_detector(graph_bench):
    return train_graph_embedding(graph_bench.edges, d=8, walk_length=20,
                                 walks_per_node=20, window=4, epochs=15, seed=1)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
