"""Symbolic protocol analysis by backwards narrowing over strand-space states."""

__version__ = "0.1.0"
