"""Changepoint-attention sequence models for at-risk student prediction."""

__version__ = "0.1.0"
