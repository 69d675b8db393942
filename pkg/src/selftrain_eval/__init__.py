"""Unsupervised accuracy estimation and error detection with self-training ensembles."""

__version__ = "0.1.0"
