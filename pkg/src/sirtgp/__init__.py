"""Sparse interaction-aware classifiers for P300 speller EEG."""

__version__ = "0.1.0"
