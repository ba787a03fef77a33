"""Driving-volatility features and mixed logit crash-severity estimation."""

__version__ = "0.1.0"
