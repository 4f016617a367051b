"""Corruption-based faithfulness and robustness evaluation for post-hoc
attribution methods on time-series classifiers."""

__version__ = "0.1.0"
