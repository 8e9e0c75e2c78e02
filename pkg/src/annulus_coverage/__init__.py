"""Circumferential coverage control on annulus-shaped domains."""

__version__ = "0.1.0"
