"""Generalize a developer-written unit test into tests for further scenarios of the same method."""

__version__ = "0.1.0"
