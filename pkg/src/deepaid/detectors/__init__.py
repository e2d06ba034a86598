"""Desk-scale stand-ins for the three interpreted detector classes."""

from .reconstruction import ReconstructionDetector, train_reconstruction
from .sequence import (SequencePredictor, VectorSequencePredictor, one_hot,
                       sliding_windows, train_sequence_predictor,
                       train_vector_predictor)
from .graph import GraphDetector, train_graph_embedding

__all__ = [
    "ReconstructionDetector", "train_reconstruction",
    "SequencePredictor", "VectorSequencePredictor", "one_hot",
    "sliding_windows", "train_sequence_predictor", "train_vector_predictor",
    "GraphDetector", "train_graph_embedding",
]
