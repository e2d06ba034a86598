"""Interpretation, distillation and evaluation toolkit for unsupervised
anomaly detectors over tabular, sequence and graph data."""

__version__ = "0.1.0"
