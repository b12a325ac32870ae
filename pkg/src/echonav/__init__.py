"""Desk-scale binaural audio navigation simulator and evaluation suite."""

__version__ = "0.1.0"
