"""Deterministic multi-agent traffic simulation with SVO communication."""

__version__ = "0.1.0"
