"""Numerical laboratory for causal fermion systems."""
__version__ = "0.1.0"
