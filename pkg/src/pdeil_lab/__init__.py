"""Density-ratio imitation learning: reward recovery from expert demonstrations."""

__version__ = "0.1.0"
