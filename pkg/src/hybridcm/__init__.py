"""Hybrid residual features and ensemble classifiers for CSTR fault diagnosis."""
__version__ = "0.1.0"
