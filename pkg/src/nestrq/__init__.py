"""Desk-scale lab for next-token-prediction speech pre-training over random-projection tokens."""

__version__ = "0.1.0"
