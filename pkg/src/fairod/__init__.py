"""Fairness-aware autoencoder outlier detection toolkit."""

__version__ = "0.1.0"
