"""Bias randomized benchmarking: channels, groups, protocol simulation and fitting."""

__version__ = "0.1.0"
