"""Distributionally robust inverse optimization over Wasserstein balls."""

__version__ = "0.1.0"
