"""Transmit-power randomization for physical-layer anchor location privacy."""

__version__ = "0.1.0"
