"""Unsupervised feature learning with dictionary K-means and small CNN ensembles."""

__version__ = "0.1.0"
