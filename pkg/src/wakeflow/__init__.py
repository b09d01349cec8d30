"""Steady exterior-flow solver with anisotropic wake diagnostics."""

__version__ = "0.1.0"
