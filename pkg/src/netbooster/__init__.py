"""Expand-then-contract training toolkit for tiny convolutional networks."""

__version__ = "0.1.0"
