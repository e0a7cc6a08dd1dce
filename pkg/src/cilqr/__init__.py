"""Constrained iLQR motion planning with exact and risk-aware obstacle terms."""

__version__ = "0.1.0"
