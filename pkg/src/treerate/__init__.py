"""Entropy rates and divergences of laws on the leaves of locally finite trees."""

__version__ = "0.1.0"
