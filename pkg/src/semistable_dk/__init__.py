"""Semistable limit laws for renewal sequences and interval maps."""

__version__ = "0.1.0"
