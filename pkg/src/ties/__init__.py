"""Temporal interaction embeddings: a graph-embedding pre-trainer, supervised
sequence classifiers over interaction logs, and the evaluation/fusion
protocol, all verifiable on synthetic data at desk scale."""

__version__ = "0.1.0"
