"""Preference-based RL with a discriminator standing in for the labeler."""

__version__ = "0.1.0"
