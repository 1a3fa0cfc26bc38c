"""Joint state and parameter identification for constrained rigid-body systems."""

__version__ = "0.1.0"
