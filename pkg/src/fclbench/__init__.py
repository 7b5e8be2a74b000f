"""Deterministic federated continual learning benchmark engine."""

__version__ = "0.1.0"
