"""Loschmidt-echo decay toolkit for the quantum kicked rotator."""

__version__ = "0.1.0"
