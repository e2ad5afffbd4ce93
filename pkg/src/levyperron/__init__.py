"""Nonlocal Bellman-Isaacs operators under weak ellipticity: certification, barriers, Perron solve, regularity."""

__version__ = "0.1.0"
